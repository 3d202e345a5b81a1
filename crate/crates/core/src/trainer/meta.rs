use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::autodiff::{grad_through_adaptation, sgd_adapt, value_and_grad, Graph, LossFn, ParamSet};
use crate::data::{episode_stream, Episode, MetaDataset, QuestionRecord, Split};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::{stream, sub_rng};
use crate::tensor::{argmax, Tensor};

/// Which outer update drives meta-training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Interpolate towards the adapted parameters: `θ + (α/j) Σ_k (θ'_k − θ)`.
    Algorithm1,
    /// Descend the query loss of the adapted parameters, differentiated through the inner loop.
    SecondOrder,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Algorithm1 => "algorithm1",
            Variant::SecondOrder => "second_order",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "algorithm1" => Ok(Variant::Algorithm1),
            "second_order" => Ok(Variant::SecondOrder),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}` (algorithm1 | second_order)"))),
        }
    }
}

/// Divisor of the summed displacements in the interpolation update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageOver {
    /// Divide by the inner step count `j`, as the update is written.
    J,
    /// Divide by the number of tasks in the batch.
    Batch,
}

impl FromStr for AverageOver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "j" => Ok(AverageOver::J),
            "batch" => Ok(AverageOver::Batch),
            other => Err(Error::InvalidConfig(format!("unknown average_over `{other}` (j | batch)"))),
        }
    }
}

/// Step rule for the second-order meta-gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizer {
    /// `θ − α g`.
    #[default]
    Sgd,
    /// Adam with learning rate `α` and default moments.
    Adam,
}

impl FromStr for OuterOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OuterOptimizer::Sgd),
            "adam" => Ok(OuterOptimizer::Adam),
            other => Err(Error::InvalidConfig(format!("unknown outer optimizer `{other}` (sgd | adam)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub outer_lr: f64,
    pub tasks_per_batch: usize,
    pub variant: Variant,
    pub average_over: AverageOver,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Rescales the summed batch meta-gradient to at most this global L2 norm
    /// (second-order variant only). `None` applies the raw update.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Second-order variant only; the interpolation update has no gradient to feed it.
    #[serde(default)]
    pub outer_optimizer: OuterOptimizer,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 0.05,
            inner_steps: 3,
            outer_lr: 0.1,
            tasks_per_batch: 4,
            variant: Variant::Algorithm1,
            average_over: AverageOver::J,
            way: 5,
            shot: 1,
            query: 5,
            iterations: 1000,
            seed: 0,
            max_grad_norm: None,
            outer_optimizer: OuterOptimizer::Sgd,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.inner_lr) || !positive(self.outer_lr) {
            return Err(Error::InvalidConfig(format!(
                "inner_lr and outer_lr must be positive (got {} and {})",
                self.inner_lr, self.outer_lr
            )));
        }
        if self.inner_steps == 0 || self.tasks_per_batch == 0 {
            return Err(Error::InvalidConfig("inner_steps and tasks_per_batch must be at least 1".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !positive(c) {
                return Err(Error::InvalidConfig(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        if self.way < 2 || self.shot == 0 || self.query == 0 {
            return Err(Error::InvalidConfig("need way >= 2, shot >= 1 and query >= 1".into()));
        }
        Ok(())
    }

    /// Divisor applied to the summed displacements of one batch.
    pub fn interpolation_divisor(&self) -> f64 {
        match self.average_over {
            AverageOver::J => self.inner_steps as f64,
            AverageOver::Batch => self.tasks_per_batch as f64,
        }
    }
}

/// Mean cross-entropy of `items` under a `way`-slot head.
pub fn items_loss<'a, 'r: 'a>(
    encoder: &'a Encoder,
    items: &'a [(&'r QuestionRecord, usize)],
    way: usize,
) -> impl LossFn + 'a {
    move |graph: &mut Graph, params: &crate::autodiff::BoundParams| {
        encoder.classification_loss(graph, params, items, way).map(|(loss, _)| loss)
    }
}

/// Loss, accuracy and argmax predictions of labelled items.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemScore {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn score_items(
    encoder: &Encoder,
    params: &ParamSet,
    items: &[(&QuestionRecord, usize)],
    way: usize,
) -> Result<ItemScore> {
    let mut graph = Graph::new();
    let bound = params.bind_constant(&mut graph);
    let (loss, logits) = encoder.classification_loss(&mut graph, &bound, items, way)?;
    let logits = graph.value(logits);
    let predictions: Vec<usize> = (0..items.len()).map(|i| argmax(logits.row(i)).expect("non-empty row")).collect();
    let correct = predictions.iter().zip(items).filter(|(p, (_, s))| *p == s).count();
    Ok(ItemScore {
        loss: graph.value(loss).item().expect("scalar loss"),
        accuracy: correct as f64 / items.len() as f64,
        predictions,
    })
}

/// `steps` full-batch SGD steps on the support cross-entropy. `theta` is not modified.
pub fn inner_adapt(
    encoder: &Encoder,
    theta: &ParamSet,
    support: &[(&QuestionRecord, usize)],
    way: usize,
    lr: f64,
    steps: usize,
) -> Result<ParamSet> {
    if support.is_empty() {
        return Err(Error::Empty("support set"));
    }
    sgd_adapt(theta, steps, lr, &items_loss(encoder, support, way))
}

/// `θ + (α/j) Σ_k (θ'_k − θ)`, elementwise.
pub fn outer_update_algorithm1(theta: &ParamSet, adapted: &[ParamSet], alpha: f64, j: usize) -> Result<ParamSet> {
    if j == 0 {
        return Err(Error::InvalidConfig("inner step count j must be at least 1".into()));
    }
    interpolate(theta, adapted, alpha / j as f64)
}

/// `θ + scale · Σ_k (θ'_k − θ)`, summing the displacements in task order.
pub fn interpolate(theta: &ParamSet, adapted: &[ParamSet], scale: f64) -> Result<ParamSet> {
    if adapted.is_empty() {
        return Err(Error::Empty("adapted parameter sets"));
    }
    for a in adapted {
        theta.check_congruent(a)?;
    }
    theta
        .iter()
        .map(|(name, t)| {
            let tensors: Vec<&[f64]> = adapted.iter().map(|a| a.get(name).expect("congruent").data()).collect();
            let data = t
                .data()
                .iter()
                .enumerate()
                .map(|(i, &base)| {
                    let displacement: f64 = tensors.iter().map(|a| a[i] - base).sum();
                    base + scale * displacement
                })
                .collect();
            Ok((name.to_string(), Tensor::new(t.shape().to_vec(), data)?))
        })
        .collect()
}

/// `θ − α Σ_τ g_τ`, summing the meta-gradients in task order.
pub fn apply_meta_gradients(theta: &ParamSet, grads: &[ParamSet], alpha: f64) -> Result<ParamSet> {
    let mut total = theta.clone();
    for g in grads {
        total = total.add_scaled(g, -alpha)?;
    }
    Ok(total)
}

/// Meta-gradient of one episode's query loss after `steps` differentiable SGD steps on its support.
pub fn episode_meta_gradient(
    encoder: &Encoder,
    theta: &ParamSet,
    episode: &Episode,
    lr: f64,
    steps: usize,
) -> Result<crate::autodiff::MetaGradient> {
    let support = episode.support_items();
    let query = episode.query_items();
    if support.is_empty() || query.is_empty() {
        return Err(Error::Empty("support or query set"));
    }
    let way = episode.way();
    let (inner, outer) = (items_loss(encoder, &support, way), items_loss(encoder, &query, way));
    grad_through_adaptation(theta, &inner, &outer, steps, lr)
}

/// `θ − α Σ_τ dL(D'_τ, θ'_τ)/dθ` over a batch of episodes.
pub fn outer_update_second_order(
    encoder: &Encoder,
    theta: &ParamSet,
    episodes: &[Episode],
    lr: f64,
    steps: usize,
    alpha: f64,
) -> Result<ParamSet> {
    let grads = episodes
        .par_iter()
        .map(|ep| episode_meta_gradient(encoder, theta, ep, lr, steps).map(|m| m.grad))
        .collect::<Result<Vec<_>>>()?;
    for g in &grads {
        if g.iter().any(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { op: "meta-gradient" });
        }
    }
    apply_meta_gradients(theta, &grads, alpha)
}

/// Per meta-iteration statistics, averaged over the tasks of the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub pre_loss: f64,
    pub post_loss: f64,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct MetaTrainOutput {
    pub params: ParamSet,
    pub log: Vec<IterationLog>,
}

/// Randomly initialized meta-classifier for `way` slots, drawn from the init sub-stream.
pub fn initial_params(encoder: &Encoder, way: usize, seed: u64) -> ParamSet {
    encoder.init_params(way, &mut sub_rng(seed, stream::INIT))
}

struct TaskOutcome {
    pre: ItemScore,
    post: ItemScore,
    /// Adapted parameters, or the meta-gradient for the second-order variant.
    result: ParamSet,
}

fn run_task(encoder: &Encoder, theta: &ParamSet, episode: &Episode, config: &MetaConfig) -> Result<TaskOutcome> {
    let way = episode.way();
    let support = episode.support_items();
    let query = episode.query_items();
    let pre = score_items(encoder, theta, &query, way)?;
    let (adapted, result) = match config.variant {
        Variant::Algorithm1 => {
            let adapted = inner_adapt(encoder, theta, &support, way, config.inner_lr, config.inner_steps)?;
            (adapted.clone(), adapted)
        }
        Variant::SecondOrder => {
            let mg = episode_meta_gradient(encoder, theta, episode, config.inner_lr, config.inner_steps)?;
            (mg.adapted, mg.grad)
        }
    };
    let post = score_items(encoder, &adapted, &query, way)?;
    Ok(TaskOutcome { pre, post, result })
}

/// Meta-trains a `config.way`-slot classifier on the meta-train classes,
/// starting from [`initial_params`]. Deterministic for a fixed config.
pub fn meta_train(encoder: &Encoder, dataset: &MetaDataset, config: &MetaConfig) -> Result<MetaTrainOutput> {
    meta_train_from(encoder, dataset, config, initial_params(encoder, config.way, config.seed), |_| {})
}

/// Like [`meta_train`] from explicit parameters, calling `on_iteration` after every batch.
pub fn meta_train_from(
    encoder: &Encoder,
    dataset: &MetaDataset,
    config: &MetaConfig,
    init: ParamSet,
    mut on_iteration: impl FnMut(&IterationLog),
) -> Result<MetaTrainOutput> {
    config.validate()?;
    let width = encoder.head_width(&init)?;
    if width != config.way {
        return Err(Error::InvalidConfig(format!("initial head has {width} slots, config asks for {}", config.way)));
    }
    let mut episodes = episode_stream(
        dataset,
        Split::Train,
        config.way,
        config.shot,
        config.query,
        config.iterations * config.tasks_per_batch,
        config.seed,
    );
    let mut adam = match (config.variant, config.outer_optimizer) {
        (Variant::SecondOrder, OuterOptimizer::Adam) => {
            Some(Adam::new(AdamConfig { lr: config.outer_lr, ..Default::default() }, &init)?)
        }
        _ => None,
    };
    let mut theta = init;
    let mut log = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let start = Instant::now();
        let batch = episodes.by_ref().take(config.tasks_per_batch).collect::<Result<Vec<_>>>()?;
        let outcomes = batch.par_iter().map(|ep| run_task(encoder, &theta, ep, config)).collect::<Result<Vec<_>>>()?;
        let results: Vec<ParamSet> = outcomes.iter().map(|o| o.result.clone()).collect();
        theta = match config.variant {
            Variant::Algorithm1 => interpolate(&theta, &results, config.outer_lr / config.interpolation_divisor())?,
            Variant::SecondOrder => {
                let mut total = apply_meta_gradients(&ParamSet::zeros_like(&theta), &results, -1.0)?;
                if let Some(limit) = config.max_grad_norm {
                    let norm = total.l2_norm();
                    if norm > limit {
                        total = ParamSet::zeros_like(&theta).add_scaled(&total, limit / norm)?;
                    }
                }
                match adam.as_mut() {
                    Some(opt) => opt.step(&theta, &total)?,
                    None => theta.add_scaled(&total, -config.outer_lr)?,
                }
            }
        };
        let n = outcomes.len() as f64;
        let mean = |f: &dyn Fn(&TaskOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        let entry = IterationLog {
            iteration,
            pre_loss: mean(&|o| o.pre.loss),
            post_loss: mean(&|o| o.post.loss),
            pre_accuracy: mean(&|o| o.pre.accuracy),
            post_accuracy: mean(&|o| o.post.accuracy),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_iteration(&entry);
        log.push(entry);
    }
    Ok(MetaTrainOutput { params: theta, log })
}

/// Plain gradient of the summed query losses of `episodes` at `theta`.
pub fn pooled_query_gradient(encoder: &Encoder, theta: &ParamSet, episodes: &[Episode]) -> Result<ParamSet> {
    let mut total: Option<ParamSet> = None;
    for ep in episodes {
        let query = ep.query_items();
        let (_, g) = value_and_grad(theta, &items_loss(encoder, &query, ep.way()))?;
        total = Some(match total {
            None => g,
            Some(t) => t.add_scaled(&g, 1.0)?,
        });
    }
    total.ok_or(Error::Empty("episodes"))
}
