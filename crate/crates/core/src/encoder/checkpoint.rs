//! Binary checkpoint container. All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes   "MQCK"
//! version      u32       1
//! lowercase    u8        0 | 1
//! buckets      u64
//! n_orders     u32, then n_orders x u32 n-gram orders
//! dim          u64
//! hidden       u64
//! emb_std      f64
//! n_params     u32
//! per parameter, in name order:
//!   name_len   u32, then name_len bytes of UTF-8
//!   rank       u32, then rank x u64 dimensions
//!   values     prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::model::EncoderConfig;
use super::tokenizer::TokenizerConfig;
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MQCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let tok = &self.config.tokenizer;
        out.push(u8::from(tok.lowercase));
        out.extend_from_slice(&(tok.buckets as u64).to_le_bytes());
        out.extend_from_slice(&(tok.ngram_orders.len() as u32).to_le_bytes());
        for &o in &tok.ngram_orders {
            out.extend_from_slice(&(o as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.config.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.config.hidden as u64).to_le_bytes());
        out.extend_from_slice(&self.config.embedding_std.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let lowercase = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad lowercase flag {b}"))),
        };
        let buckets = r.u64()? as usize;
        let n_orders = r.u32()? as usize;
        let ngram_orders = (0..n_orders).map(|_| r.u32().map(|o| o as usize)).collect::<Result<_>>()?;
        let dim = r.u64()? as usize;
        let hidden = r.u64()? as usize;
        let embedding_std = r.f64()?;
        let config = EncoderConfig {
            tokenizer: TokenizerConfig { lowercase, buckets, ngram_orders },
            dim,
            hidden,
            embedding_std,
        };

        let n_params = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n_params {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let count = count
                .filter(|&c| c.saturating_mul(8) <= r.remaining())
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` shape {shape:?} exceeds file size")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            if params.insert(name.clone(), tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
