use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::expansion::ExpansionInput;
use crate::autodiff::{grad, BoundParams, Graph, NodeId, ParamSet};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::{stream, sub_rng};
use crate::tensor::{argmax, softmax_slice};
use crate::trainer::{Adam, AdamConfig, EpochLog};

/// Chosen option and the softmax distribution over options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McAnswer {
    pub index: usize,
    pub probs: Vec<f64>,
}

/// Scores every option against the expanded context with a width-1 head;
/// ties go to the lowest index.
pub fn answer_mc(encoder: &Encoder, params: &ParamSet, input: &ExpansionInput, options: &[&str]) -> Result<McAnswer> {
    if options.is_empty() {
        return Err(Error::Empty("answer options"));
    }
    let mut graph = Graph::new();
    let bound = params.bind_constant(&mut graph);
    let logits = encoder.score_options(&mut graph, &bound, &input.text(), options)?;
    let probs = softmax_slice(graph.value(logits).data());
    let index = argmax(graph.value(logits).data()).expect("non-empty options");
    Ok(McAnswer { index, probs })
}

/// One multiple-choice item with its expanded context.
#[derive(Clone, Debug, PartialEq)]
pub struct QaExample {
    pub input: ExpansionInput,
    pub options: Vec<String>,
    pub answer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReaderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 16, lr: 3e-3, seed: 0 }
    }
}

/// Mean option cross-entropy over `items`; also returns each item's logits node.
fn reader_loss(
    graph: &mut Graph,
    encoder: &Encoder,
    params: &BoundParams,
    items: &[&QaExample],
) -> Result<(NodeId, Vec<NodeId>)> {
    let mut total: Option<NodeId> = None;
    let mut all_logits = Vec::with_capacity(items.len());
    for item in items {
        let options: Vec<&str> = item.options.iter().map(String::as_str).collect();
        let logits = encoder.score_options(graph, params, &item.input.text(), &options)?;
        let ce = graph.cross_entropy(logits, &[item.answer])?;
        total = Some(match total {
            None => ce,
            Some(t) => graph.add(t, ce)?,
        });
        all_logits.push(logits);
    }
    let total = total.ok_or(Error::Empty("reader batch"))?;
    Ok((graph.scale(total, 1.0 / items.len() as f64)?, all_logits))
}

#[derive(Clone, Debug)]
pub struct ReaderOutput {
    pub params: ParamSet,
    pub log: Vec<EpochLog>,
}

/// Trains a width-1 scoring head and encoder from the init sub-stream with Adam.
/// The logged accuracy is measured on each batch before its update.
pub fn train_reader(encoder: &Encoder, items: &[QaExample], config: &ReaderConfig) -> Result<ReaderOutput> {
    if items.is_empty() {
        return Err(Error::Empty("reader training items"));
    }
    // negated so that a NaN rate is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if config.epochs == 0 || config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidConfig("reader epochs, batch_size and lr must be positive".into()));
    }
    let mut params = encoder.init_params(1, &mut sub_rng(config.seed, stream::INIT));
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..Default::default() }, &params)?;
    let mut order_rng = sub_rng(config.seed, stream::BATCHES);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&QaExample> = chunk.iter().map(|&i| &items[i]).collect();
            let mut graph = Graph::new();
            let bound = params.bind(&mut graph);
            let (loss, logits) = reader_loss(&mut graph, encoder, &bound, &batch)?;
            loss_sum += graph.value(loss).item().expect("scalar") * batch.len() as f64;
            correct += batch
                .iter()
                .zip(&logits)
                .filter(|(item, &l)| argmax(graph.value(l).data()) == Some(item.answer))
                .count();
            let grads = grad(&mut graph, loss, &bound)?;
            params = adam.step(&params, &grads)?;
        }
        log.push(EpochLog {
            epoch,
            loss: loss_sum / items.len() as f64,
            accuracy: correct as f64 / items.len() as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(ReaderOutput { params, log })
}
