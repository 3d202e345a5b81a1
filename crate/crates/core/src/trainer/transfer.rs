use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::meta::{inner_adapt, items_loss, score_items};
use super::optim::{Adam, AdamConfig};
use crate::autodiff::{value_and_grad, ParamSet};
use crate::data::{MetaDataset, QuestionRecord, Split};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::{stream, sub_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Passes over the meta-train records during supervised pretraining.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Full-batch SGD steps on each test episode's support set.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, lr: 3e-3, finetune_steps: 10, finetune_lr: 0.1, seed: 0 }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.finetune_lr > 0.0) {
            return Err(Error::InvalidConfig("lr and finetune_lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub params: ParamSet,
    /// Meta-train classes in head-index order.
    pub classes: Vec<String>,
    pub log: Vec<EpochLog>,
}

/// Supervised training of one head over every meta-train class (Adam, minibatches).
pub fn pretrain_supervised(
    encoder: &Encoder,
    dataset: &MetaDataset,
    config: &TransferConfig,
) -> Result<PretrainOutput> {
    config.validate()?;
    let classes = dataset.classes(Split::Train).to_vec();
    let n = classes.len();
    let items: Vec<(&QuestionRecord, usize)> =
        classes.iter().enumerate().flat_map(|(i, c)| dataset.records(c).iter().map(move |r| (r.as_ref(), i))).collect();
    if items.is_empty() {
        return Err(Error::Empty("meta-train records"));
    }

    let mut params = encoder.init_params(n, &mut sub_rng(config.seed, stream::INIT));
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..Default::default() }, &params)?;
    let mut order_rng = sub_rng(config.seed, stream::BATCHES);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&QuestionRecord, usize)> = chunk.iter().map(|&i| items[i]).collect();
            let (loss, grads) = value_and_grad(&params, &items_loss(encoder, &batch, n))?;
            loss_sum += loss * batch.len() as f64;
            params = adam.step(&params, &grads)?;
        }
        let accuracy = score_items(encoder, &params, &items, n)?.accuracy;
        log.push(EpochLog {
            epoch,
            loss: loss_sum / items.len() as f64,
            accuracy,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(PretrainOutput { params, classes, log })
}

/// Swaps in a zero `way`-slot head and fine-tunes all layers on `support`.
pub fn transfer_adapt(
    encoder: &Encoder,
    pretrained: &ParamSet,
    support: &[(&QuestionRecord, usize)],
    way: usize,
    steps: usize,
    lr: f64,
) -> Result<ParamSet> {
    let fresh = encoder.reset_head(pretrained, way);
    inner_adapt(encoder, &fresh, support, way, lr, steps)
}
