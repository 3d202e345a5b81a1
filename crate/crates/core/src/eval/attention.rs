//! Attention-weight export. The text record has a header line
//! `token<TAB>weight_before<TAB>weight_after` followed by one line per token
//! of the tokenizer output, in sequence order; weights use Rust's shortest
//! round-trip float formatting.

use crate::autodiff::{Graph, ParamSet};
use crate::encoder::Encoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

fn weights(encoder: &Encoder, params: &ParamSet, ids: &[usize]) -> Result<Vec<f64>> {
    let mut graph = Graph::new();
    let bound = params.bind_constant(&mut graph);
    let (_, w) = encoder.encode_sequence(&mut graph, &bound, ids)?;
    Ok(w.to_vec())
}

/// Attention of the sequence-start query over every token of `text`, under two parameter sets.
pub fn export_attention(encoder: &Encoder, text: &str, before: &ParamSet, after: &ParamSet) -> Result<AttentionRecord> {
    if text.trim().is_empty() {
        return Err(Error::Empty("text"));
    }
    let tokens = encoder.tokenizer().encode(text);
    let ids: Vec<usize> = tokens.iter().map(|t| t.id).collect();
    Ok(AttentionRecord {
        tokens: tokens.into_iter().map(|t| t.text).collect(),
        before: weights(encoder, before, &ids)?,
        after: weights(encoder, after, &ids)?,
    })
}

impl AttentionRecord {
    pub fn render(&self) -> String {
        let mut out = String::from("token\tweight_before\tweight_after\n");
        for ((t, b), a) in self.tokens.iter().zip(&self.before).zip(&self.after) {
            out.push_str(&format!("{t}\t{b}\t{a}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { path: "<attention>".into(), line, msg: msg.to_string() };
        let mut lines = text.lines();
        if lines.next() != Some("token\tweight_before\tweight_after") {
            return Err(bad(1, "missing header"));
        }
        let mut rec = AttentionRecord { tokens: Vec::new(), before: Vec::new(), after: Vec::new() };
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let [t, b, a] = fields[..] else { return Err(bad(i + 2, "expected three tab-separated fields")) };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "bad weight"));
            rec.tokens.push(t.to_string());
            rec.before.push(num(b)?);
            rec.after.push(num(a)?);
        }
        Ok(rec)
    }
}
