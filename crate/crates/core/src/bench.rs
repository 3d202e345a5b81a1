//! Frozen configurations of the two synthetic benchmarks.
//!
//! The classification benchmark uses a corpus whose only class cue is the
//! signature word; the question-answering benchmark keeps hints tied to
//! classes so that labels and solved examples reveal the answer. Values were
//! fixed by a single calibration sweep and must not be tuned per run.

use serde::{Deserialize, Serialize};

use crate::data::synthetic::SyntheticSpec;
use crate::data::BuildParams;
use crate::encoder::{EncoderConfig, TokenizerConfig};
use crate::eval::EvalConfig;
use crate::qa::ReaderConfig;
use crate::trainer::{MetaConfig, OuterOptimizer, TransferConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureBenchmark {
    pub corpus: SyntheticSpec,
    pub build: BuildParams,
    pub encoder: EncoderConfig,
    pub meta: MetaConfig,
    pub transfer: TransferConfig,
    /// Shot is overwritten per regime; adaptation matches `meta`.
    pub eval: EvalConfig,
    pub build_seed: u64,
}

/// Unigram buckets: a bigram containing an unseen signature is itself unseen
/// and differs between questions of one class, which only adds noise.
pub fn benchmark_encoder() -> EncoderConfig {
    EncoderConfig {
        tokenizer: TokenizerConfig { ngram_orders: vec![1], ..Default::default() },
        dim: 32,
        hidden: 128,
        embedding_std: 1.0,
    }
}

pub fn signature_benchmark() -> SignatureBenchmark {
    let meta = MetaConfig {
        inner_lr: 0.3,
        inner_steps: 3,
        outer_lr: 1e-3,
        tasks_per_batch: 4,
        variant: Variant::SecondOrder,
        way: 5,
        shot: 1,
        query: 5,
        iterations: 1500,
        seed: 1,
        max_grad_norm: Some(5.0),
        outer_optimizer: OuterOptimizer::Adam,
        ..Default::default()
    };
    SignatureBenchmark {
        corpus: SyntheticSpec {
            classes: 300,
            per_class: 10,
            min_question_words: 10,
            max_question_words: 14,
            class_hints: false,
            ..Default::default()
        },
        build: BuildParams::default(),
        encoder: benchmark_encoder(),
        transfer: TransferConfig { finetune_steps: meta.inner_steps, finetune_lr: meta.inner_lr, ..Default::default() },
        eval: EvalConfig {
            way: meta.way,
            shot: 1,
            query: meta.query,
            episodes: 200,
            inner_lr: meta.inner_lr,
            inner_steps: meta.inner_steps,
            seed: 2,
        },
        meta,
        build_seed: 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaBenchmark {
    pub corpus: SyntheticSpec,
    pub build: BuildParams,
    pub encoder: EncoderConfig,
    /// Meta-classifier behind the predicted-label runs.
    pub meta: MetaConfig,
    pub reader: ReaderConfig,
    pub shots: usize,
    pub seed: u64,
    pub build_seed: u64,
}

pub fn qa_benchmark() -> QaBenchmark {
    let SignatureBenchmark { meta, encoder, build, .. } = signature_benchmark();
    QaBenchmark {
        corpus: SyntheticSpec {
            classes: 80,
            per_class: 10,
            min_question_words: 10,
            max_question_words: 14,
            class_hints: true,
            ..Default::default()
        },
        build,
        encoder,
        meta: MetaConfig { iterations: 300, ..meta },
        reader: ReaderConfig { epochs: 30, batch_size: 16, lr: 3e-3, seed: 3 },
        shots: 1,
        seed: 5,
        build_seed: 1,
    }
}
