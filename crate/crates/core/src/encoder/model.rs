//! Hashed-embedding encoder with a single attention head and an MLP head.
//!
//! A sequence of token ids is embedded and pooled by attending from the
//! sequence-start token (the `[CLS]` role) through query, key and value
//! projections. The projections are applied on the single query side, which
//! gives the same result as projecting every token but costs one row. The
//! pooled vector feeds `tanh(pooled W1 + b1) W2 + b2`. With `W2` of width N the
//! head yields N class-slot logits; with width 1 it yields a per-option score.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tokenizer::{Tokenizer, TokenizerConfig, SEP_ID, SEQ_START_ID};
use crate::autodiff::{BoundParams, Graph, NodeId, ParamSet};
use crate::data::QuestionRecord;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const EMBEDDING: &str = "embedding";
pub const ATTN_QUERY: &str = "attn.query";
pub const ATTN_KEY: &str = "attn.key";
pub const ATTN_VALUE: &str = "attn.value";
pub const HEAD_W1: &str = "head.w1";
pub const HEAD_B1: &str = "head.b1";
pub const HEAD_W2: &str = "head.w2";
pub const HEAD_B2: &str = "head.b2";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub tokenizer: TokenizerConfig,
    pub dim: usize,
    pub hidden: usize,
    /// Standard deviation of the embedding table at initialization.
    pub embedding_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { tokenizer: TokenizerConfig::default(), dim: 64, hidden: 128, embedding_std: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    tokenizer: Tokenizer,
}

/// Pooled representations of a batch plus the attention weights of every sequence.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[B, d]`
    pub pooled: NodeId,
    pub weights: Vec<Tensor>,
}

fn normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![0.0; n]
    } else {
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| dist.sample(rng)).collect()
    };
    Tensor::new(shape.to_vec(), data).expect("finite normal samples")
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidConfig("encoder dim and hidden must be positive".into()));
        }
        if !(config.embedding_std.is_finite() && config.embedding_std >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad embedding std {}", config.embedding_std)));
        }
        let tokenizer = Tokenizer::new(config.tokenizer.clone())?;
        Ok(Self { config, tokenizer })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Random parameters for a head with `outputs` logits.
    pub fn init_params(&self, outputs: usize, rng: &mut Rng) -> ParamSet {
        let (v, d, h) = (self.tokenizer.vocab_size(), self.config.dim, self.config.hidden);
        let proj = 1.0 / (d as f64).sqrt();
        let mut p = ParamSet::new();
        p.insert(EMBEDDING, normal(rng, &[v, d], self.config.embedding_std));
        p.insert(ATTN_QUERY, normal(rng, &[d, d], proj));
        p.insert(ATTN_KEY, normal(rng, &[d, d], proj));
        p.insert(ATTN_VALUE, normal(rng, &[d, d], proj));
        p.insert(HEAD_W1, normal(rng, &[d, h], proj));
        p.insert(HEAD_B1, Tensor::zeros(&[h]));
        p.insert(HEAD_W2, normal(rng, &[h, outputs], 1.0 / (h as f64).sqrt()));
        p.insert(HEAD_B2, Tensor::zeros(&[outputs]));
        p
    }

    /// Replaces the output layer with a zero-initialized one of width `outputs`.
    pub fn reset_head(&self, params: &ParamSet, outputs: usize) -> ParamSet {
        let mut p = params.clone();
        p.insert(HEAD_W2, Tensor::zeros(&[self.config.hidden, outputs]));
        p.insert(HEAD_B2, Tensor::zeros(&[outputs]));
        p
    }

    /// Random-initialized output layer of width `outputs`, other layers kept.
    pub fn random_head(&self, params: &ParamSet, outputs: usize, rng: &mut Rng) -> ParamSet {
        let h = self.config.hidden;
        let mut p = params.clone();
        p.insert(HEAD_W2, normal(rng, &[h, outputs], 1.0 / (h as f64).sqrt()));
        p.insert(HEAD_B2, Tensor::zeros(&[outputs]));
        p
    }

    pub fn head_width(&self, params: &ParamSet) -> Result<usize> {
        let w2 = params.require(HEAD_W2)?;
        w2.dims2().map(|(_, n)| n).ok_or_else(|| Error::Incongruent(format!("{HEAD_W2} is not a matrix")))
    }

    fn check_head(&self, graph: &Graph, params: &BoundParams, outputs: usize) -> Result<()> {
        let w2 = graph.shape(params.get(HEAD_W2)?);
        if w2 != [self.config.hidden, outputs] {
            return Err(Error::ShapeMismatch {
                op: "head",
                detail: format!("head is {w2:?}, expected [{}, {outputs}]", self.config.hidden),
            });
        }
        Ok(())
    }

    /// Token ids of `[CLS] question answer [SEP]`.
    pub fn question_ids(&self, record: &QuestionRecord) -> Vec<usize> {
        self.tokenizer.encode_ids(&record.classification_text())
    }

    /// Token ids of `[CLS] context [SEP] option [SEP]`.
    pub fn pair_ids(&self, context: &str, option: &str) -> Vec<usize> {
        let mut ids = self.tokenizer.encode_ids(context);
        let option_ids = self.tokenizer.encode_ids(option);
        // drop the option's own [CLS]; keep its trailing [SEP]
        debug_assert_eq!(option_ids.first(), Some(&SEQ_START_ID));
        debug_assert_eq!(ids.last(), Some(&SEP_ID));
        ids.extend_from_slice(&option_ids[1..]);
        ids
    }

    /// Pools one sequence; returns the `[1, d]` vector and the attention weights over tokens.
    pub fn encode_sequence(&self, graph: &mut Graph, params: &BoundParams, ids: &[usize]) -> Result<(NodeId, Tensor)> {
        let mut enc = self.encode_batch(graph, params, &[ids])?;
        Ok((enc.pooled, enc.weights.remove(0)))
    }

    pub fn encode_batch(&self, graph: &mut Graph, params: &BoundParams, seqs: &[&[usize]]) -> Result<Encoded> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch of sequences"));
        }
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::Empty("token sequence"));
        }
        let all_ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let mut starts = Vec::with_capacity(seqs.len());
        let mut offset = 0;
        for s in seqs {
            starts.push(offset);
            offset += s.len();
        }

        let table = params.get(EMBEDDING)?;
        let x = graph.gather(table, &all_ids)?;
        let wk = params.get(ATTN_KEY)?;
        let wv = params.get(ATTN_VALUE)?;
        let wq = params.get(ATTN_QUERY)?;
        // score_t = (x_cls Wq) . (x_t Wk) = (x_cls Wq Wk^T) . x_t and
        // sum_t w_t (x_t Wv) = (sum_t w_t x_t) Wv, so no per-token projection is formed.
        let cls = graph.gather(x, &starts)?;
        let queries = graph.matmul(cls, wq)?;
        let wk_t = graph.transpose(wk)?;
        let probes = graph.matmul(queries, wk_t)?;

        let mut mixed = Vec::with_capacity(seqs.len());
        let mut weights = Vec::with_capacity(seqs.len());
        for (b, (s, &start)) in seqs.iter().zip(&starts).enumerate() {
            let probe = graph.slice_rows(probes, b, 1)?;
            let tokens = graph.slice_rows(x, start, s.len())?;
            let (out, w) = graph.attention(probe, tokens, tokens)?;
            mixed.push(out);
            weights.push(Tensor::vector(graph.value(w).to_vec())?);
        }
        let mixed = if mixed.len() == 1 { mixed[0] } else { graph.concat_rows(&mixed)? };
        let pooled = graph.matmul(mixed, wv)?;
        Ok(Encoded { pooled, weights })
    }

    /// `[B, d] -> [B, outputs]`
    pub fn head(&self, graph: &mut Graph, params: &BoundParams, pooled: NodeId) -> Result<NodeId> {
        let z1 = graph.matmul(pooled, params.get(HEAD_W1)?)?;
        let z1 = graph.add_bias(z1, params.get(HEAD_B1)?)?;
        let hid = graph.tanh(z1)?;
        let z2 = graph.matmul(hid, params.get(HEAD_W2)?)?;
        graph.add_bias(z2, params.get(HEAD_B2)?)
    }

    /// Slot logits `[1, n]` for one question.
    pub fn classify(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        record: &QuestionRecord,
        n: usize,
    ) -> Result<NodeId> {
        self.classify_batch(graph, params, &[record], n)
    }

    /// Slot logits `[B, n]`.
    pub fn classify_batch(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        records: &[&QuestionRecord],
        n: usize,
    ) -> Result<NodeId> {
        let texts: Vec<String> = records.iter().map(|r| r.classification_text()).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        self.classify_texts(graph, params, &refs, n)
    }

    /// Slot logits `[B, n]` for arbitrary texts, each wrapped as `[CLS] text [SEP]`.
    pub fn classify_texts(&self, graph: &mut Graph, params: &BoundParams, texts: &[&str], n: usize) -> Result<NodeId> {
        self.check_head(graph, params, n)?;
        let ids: Vec<Vec<usize>> = texts.iter().map(|t| self.tokenizer.encode_ids(t)).collect();
        let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        let enc = self.encode_batch(graph, params, &refs)?;
        self.head(graph, params, enc.pooled)
    }

    /// Mean cross-entropy of labelled items under the slot head.
    pub fn classification_loss(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        items: &[(&QuestionRecord, usize)],
        n: usize,
    ) -> Result<(NodeId, NodeId)> {
        if items.is_empty() {
            return Err(Error::Empty("labelled items"));
        }
        let records: Vec<&QuestionRecord> = items.iter().map(|(r, _)| *r).collect();
        let targets: Vec<usize> = items.iter().map(|(_, s)| *s).collect();
        let logits = self.classify_batch(graph, params, &records, n)?;
        Ok((graph.cross_entropy(logits, &targets)?, logits))
    }

    /// Scalar logit of one option appended to an expanded context.
    pub fn score_option(&self, graph: &mut Graph, params: &BoundParams, context: &str, option: &str) -> Result<NodeId> {
        let logits = self.score_options(graph, params, context, &[option])?;
        graph.reshape(logits, &[])
    }

    /// Option logits `[1, n_options]`.
    pub fn score_options(
        &self,
        graph: &mut Graph,
        params: &BoundParams,
        context: &str,
        options: &[&str],
    ) -> Result<NodeId> {
        if options.is_empty() {
            return Err(Error::Empty("answer options"));
        }
        self.check_head(graph, params, 1)?;
        let ids: Vec<Vec<usize>> = options.iter().map(|o| self.pair_ids(context, o)).collect();
        let refs: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
        let enc = self.encode_batch(graph, params, &refs)?;
        let scores = self.head(graph, params, enc.pooled)?;
        graph.reshape(scores, &[1, options.len()])
    }
}
