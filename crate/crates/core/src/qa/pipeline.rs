use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expansion::{expand_query, last_level_label, ExpansionInput, ExpansionMode, SolvedExample};
use super::reader::{answer_mc, QaExample};
use crate::autodiff::{Graph, ParamSet};
use crate::data::{sample_episode_with, LabelMap, MetaDataset, QuestionRecord, Split};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{Condition, EvalReport};
use crate::rng::{derive_seed, stream, sub_rng};
use crate::tensor::argmax;
use crate::trainer::inner_adapt;

/// Where the class of a test question comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// The record's own label.
    Gold,
    /// The adapted meta-classifier's prediction.
    Pred,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Gold => "gold",
            LabelSource::Pred => "pred",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(LabelSource::Gold),
            "pred" => Ok(LabelSource::Pred),
            other => Err(Error::InvalidConfig(format!("unknown label source `{other}` (gold | pred)"))),
        }
    }
}

fn gold_class<'r>(record: &'r QuestionRecord, dataset: &MetaDataset) -> Result<&'r str> {
    record
        .label(dataset.level())
        .ok_or_else(|| Error::MissingLabel { id: record.id.clone(), level: dataset.level().to_string() })
}

/// `k` records of `class` other than `exclude_id`, uniformly without
/// replacement, in sampled order. The draw depends only on the seed and
/// `exclude_id`, so the same test question always sees the same examples.
pub fn select_examples(
    dataset: &MetaDataset,
    class: &str,
    exclude_id: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<Arc<QuestionRecord>>> {
    let mut pool: Vec<Arc<QuestionRecord>> =
        dataset.records(class).iter().filter(|r| r.id != exclude_id).cloned().collect();
    if pool.len() < k {
        return Err(Error::NotEnoughExamples { class: class.to_string(), needed: k, available: pool.len() });
    }
    let mut rng = sub_rng(derive_seed(seed, stream::EXAMPLES), exclude_id);
    let (chosen, _) = pool.partial_shuffle(&mut rng, k);
    Ok(chosen.to_vec())
}

/// Expansion of `record` as if it belonged to `class`.
pub fn build_expansion(
    record: &QuestionRecord,
    class: &str,
    dataset: &MetaDataset,
    labels: &LabelMap,
    mode: ExpansionMode,
    shots: usize,
    seed: u64,
) -> Result<ExpansionInput> {
    let label = mode.uses_label().then(|| last_level_label(class, labels));
    let examples = if mode.uses_examples() {
        if shots == 0 {
            return Err(Error::ModeMismatch { mode: mode.to_string(), detail: "zero example shots requested".into() });
        }
        select_examples(dataset, class, &record.id, shots, seed)?
            .iter()
            .map(|r| SolvedExample { question: r.question.clone(), answer: r.answer_text().to_string() })
            .collect()
    } else {
        Vec::new()
    };
    expand_query(&record.question, mode, label.as_deref(), &examples)
}

/// Reader training items: every record of `split` with its gold expansion.
pub fn gold_training_set(
    dataset: &MetaDataset,
    labels: &LabelMap,
    split: Split,
    mode: ExpansionMode,
    shots: usize,
    seed: u64,
) -> Result<Vec<QaExample>> {
    dataset
        .split_records(split)
        .iter()
        .map(|(class, r)| {
            Ok(QaExample {
                input: build_expansion(r, class, dataset, labels, mode, shots, seed)?,
                options: r.option_texts().into_iter().map(str::to_string).collect(),
                answer: r.answer_index().expect("validated record"),
            })
        })
        .collect()
}

/// Meta-classifier plus the episode protocol used to adapt it before predicting.
#[derive(Clone, Debug)]
pub struct Predictor<'a> {
    pub encoder: &'a Encoder,
    pub params: &'a ParamSet,
    pub way: usize,
    pub shot: usize,
    pub inner_lr: f64,
    pub inner_steps: usize,
}

impl Predictor<'_> {
    /// Adapts on a `way`-way episode drawn around the test question's class
    /// (the question itself excluded) and classifies the question text alone.
    pub fn predict_class(&self, dataset: &MetaDataset, record: &QuestionRecord, seed: u64) -> Result<String> {
        let class = gold_class(record, dataset)?;
        let exclude: HashSet<String> = [record.id.clone()].into_iter().collect();
        let mut rng = sub_rng(derive_seed(seed, stream::EPISODES), &record.id);
        let episode = sample_episode_with(dataset, class, self.way, self.shot, 0, &exclude, &mut rng)?;
        let adapted = inner_adapt(
            self.encoder,
            self.params,
            &episode.support_items(),
            self.way,
            self.inner_lr,
            self.inner_steps,
        )?;
        let mut graph = Graph::new();
        let bound = adapted.bind_constant(&mut graph);
        let logits = self.encoder.classify_texts(&mut graph, &bound, &[&record.question], self.way)?;
        let slot = argmax(graph.value(logits).data()).expect("way >= 1");
        Ok(episode.classes[slot].clone())
    }
}

/// Outcome for one test question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineAnswer {
    pub id: String,
    pub gold_class: String,
    /// Class whose label and examples were used; absent for `none` mode.
    pub used_class: Option<String>,
    pub chosen: usize,
    pub answer: usize,
    pub correct: bool,
    pub probs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRunConfig {
    pub mode: ExpansionMode,
    pub shots: usize,
    pub source: LabelSource,
    pub seed: u64,
}

/// Label (predicted or gold), retrieve examples, expand and answer one question.
pub fn pipeline_answer(
    reader: &Encoder,
    reader_params: &ParamSet,
    record: &QuestionRecord,
    dataset: &MetaDataset,
    labels: &LabelMap,
    config: &QaRunConfig,
    predictor: Option<&Predictor<'_>>,
) -> Result<PipelineAnswer> {
    let gold = gold_class(record, dataset)?.to_string();
    let used_class = match (config.mode, config.source) {
        (ExpansionMode::None, _) => None,
        (_, LabelSource::Gold) => Some(gold.clone()),
        (_, LabelSource::Pred) => {
            let p = predictor.ok_or_else(|| Error::InvalidConfig("pred mode needs a meta-classifier".into()))?;
            Some(p.predict_class(dataset, record, config.seed)?)
        }
    };
    let input = match &used_class {
        None => expand_query(&record.question, ExpansionMode::None, None, &[])?,
        Some(c) => build_expansion(record, c, dataset, labels, config.mode, config.shots, config.seed)?,
    };
    let mc = answer_mc(reader, reader_params, &input, &record.option_texts())?;
    let answer = record.answer_index().expect("validated record");
    Ok(PipelineAnswer {
        id: record.id.clone(),
        gold_class: gold,
        used_class,
        chosen: mc.index,
        answer,
        correct: mc.index == answer,
        probs: mc.probs,
    })
}

#[derive(Clone, Debug)]
pub struct QaRunOutput {
    pub answers: Vec<PipelineAnswer>,
    /// Per-question correctness (0 or 1) aggregated like episode accuracies.
    pub report: EvalReport,
}

/// Answers every record (in parallel, results in input order).
pub fn run_qa(
    reader: &Encoder,
    reader_params: &ParamSet,
    records: &[Arc<QuestionRecord>],
    dataset: &MetaDataset,
    labels: &LabelMap,
    config: &QaRunConfig,
    predictor: Option<&Predictor<'_>>,
) -> Result<QaRunOutput> {
    let answers = records
        .par_iter()
        .map(|r| pipeline_answer(reader, reader_params, r, dataset, labels, config, predictor))
        .collect::<Result<Vec<_>>>()?;
    let scores = answers.iter().map(|a| if a.correct { 1.0 } else { 0.0 }).collect();
    let condition = Condition {
        level: dataset.level().to_string(),
        method: format!("qa:{}", config.source),
        mode: config.mode.to_string(),
        way: records.first().map_or(0, |r| r.options.len()),
        shot: if config.mode.uses_examples() { config.shots } else { 0 },
    };
    Ok(QaRunOutput { answers, report: EvalReport::new(condition, scores, config.seed)? })
}
