use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::data::{episode_stream, Episode, MetaDataset, Split};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::trainer::{inner_adapt, score_items, transfer_adapt};

/// Two-sided normal quantiles.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const Z99: f64 = 2.575_829_303_548_901;

/// Fraction of positions where `predictions` and `gold` agree.
pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            detail: format!("{} predictions vs {} gold labels", predictions.len(), gold.len()),
        });
    }
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Labels identifying what a report measured.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub level: String,
    /// e.g. `meta:algorithm1`, `transfer`, `qa:gold`.
    pub method: String,
    /// Expansion mode for QA reports, `-` otherwise.
    pub mode: String,
    pub way: usize,
    pub shot: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    /// One score per episode (or per question for QA runs).
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Half-width of the 95% normal-approximation interval.
    pub ci95: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(condition: Condition, accuracies: Vec<f64>, seed: u64) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Empty("episode accuracies"));
        }
        let (mean, std) = mean_std(&accuracies);
        let episodes = accuracies.len();
        Ok(Self { condition, mean, ci95: Z95 * std / (episodes as f64).sqrt(), episodes, accuracies, seed })
    }

    /// Half-width of the normal interval at quantile `z`.
    pub fn half_width(&self, z: f64) -> f64 {
        let (_, std) = mean_std(&self.accuracies);
        z * std / (self.episodes as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub episodes: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { way: 5, shot: 1, query: 5, episodes: 500, inner_lr: 0.05, inner_steps: 3, seed: 0 }
    }
}

/// Meta-test episodes of an evaluation, drawn from the eval sub-stream.
pub fn eval_episodes(dataset: &MetaDataset, config: &EvalConfig) -> Result<Vec<Episode>> {
    if config.episodes == 0 {
        return Err(Error::InvalidConfig("episode count must be at least 1".into()));
    }
    episode_stream(
        dataset,
        Split::Test,
        config.way,
        config.shot,
        config.query,
        config.episodes,
        derive_seed(config.seed, stream::EVAL),
    )
    .collect()
}

/// Query accuracy of every episode after `adapt` maps it to parameters; runs episodes in parallel.
pub fn episode_accuracies(
    encoder: &Encoder,
    episodes: &[Episode],
    adapt: impl Fn(&Episode) -> Result<ParamSet> + Sync,
) -> Result<Vec<f64>> {
    episodes
        .par_iter()
        .map(|ep| {
            let params = adapt(ep)?;
            Ok(score_items(encoder, &params, &ep.query_items(), ep.way())?.accuracy)
        })
        .collect()
}

/// Adapts `theta` on each meta-test support set with `inner_steps` SGD steps and scores the query set.
pub fn evaluate_fewshot(
    encoder: &Encoder,
    theta: &ParamSet,
    dataset: &MetaDataset,
    config: &EvalConfig,
    method: &str,
) -> Result<EvalReport> {
    let width = encoder.head_width(theta)?;
    if width != config.way {
        return Err(Error::InvalidConfig(format!("classifier has {width} slots, evaluation asks for {}", config.way)));
    }
    let episodes = eval_episodes(dataset, config)?;
    let scores = episode_accuracies(encoder, &episodes, |ep| {
        if config.inner_steps == 0 {
            return Ok(theta.clone());
        }
        inner_adapt(encoder, theta, &ep.support_items(), ep.way(), config.inner_lr, config.inner_steps)
    })?;
    EvalReport::new(condition(dataset, config, method), scores, config.seed)
}

/// Transfer baseline on the same episodes: fresh zero head, `finetune_steps` SGD steps at `finetune_lr`.
pub fn evaluate_transfer(
    encoder: &Encoder,
    pretrained: &ParamSet,
    dataset: &MetaDataset,
    config: &EvalConfig,
    finetune_steps: usize,
    finetune_lr: f64,
) -> Result<EvalReport> {
    let episodes = eval_episodes(dataset, config)?;
    let scores = episode_accuracies(encoder, &episodes, |ep| {
        transfer_adapt(encoder, pretrained, &ep.support_items(), ep.way(), finetune_steps, finetune_lr)
    })?;
    EvalReport::new(condition(dataset, config, "transfer"), scores, config.seed)
}

fn condition(dataset: &MetaDataset, config: &EvalConfig, method: &str) -> Condition {
    Condition {
        level: dataset.level().to_string(),
        method: method.to_string(),
        mode: "-".into(),
        way: config.way,
        shot: config.shot,
    }
}
