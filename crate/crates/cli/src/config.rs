//! Run configuration shared by every command.
//!
//! Flags and the optional TOML file fill the same [`RunConfig`]; keys present
//! in the file replace the corresponding flags. The merged value is what a
//! command runs with and what it copies into its output directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use metaqa::encoder::EncoderConfig;
use metaqa::eval::EvalConfig;
use metaqa::qa::ReaderConfig;
use metaqa::trainer::{MetaConfig, TransferConfig};
use serde::{Deserialize, Serialize};

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random choice of the run derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Question corpus, one JSON record per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Split manifest written by `build-dataset`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Tab-separated label-code to name mapping.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Encoder checkpoint to start from or evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Hierarchy level whose labels define the classes.
    #[arg(long)]
    pub level: Option<String>,

    /// Synthetic corpus preset: `signature` or `qa`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub min_per_class: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,

    /// Classes per episode (N).
    #[arg(long)]
    pub way: Option<usize>,
    /// Support items per class (K).
    #[arg(long)]
    pub shot: Option<usize>,
    /// Query items per class.
    #[arg(long)]
    pub query: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,

    #[arg(long)]
    pub inner_lr: Option<f64>,
    /// Inner gradient steps (j).
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub outer_lr: Option<f64>,
    #[arg(long)]
    pub tasks_per_batch: Option<usize>,
    /// `algorithm1` or `second_order`.
    #[arg(long)]
    pub variant: Option<String>,
    /// `j` or `batch`.
    #[arg(long)]
    pub average_over: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
    /// `sgd` or `adam`.
    #[arg(long)]
    pub outer_optimizer: Option<String>,

    /// Supervised epochs (transfer pretraining, reader training).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate for supervised training.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,

    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Comma-separated n-gram orders, e.g. `1,2`.
    #[arg(long)]
    pub ngram_orders: Option<String>,
    #[arg(long)]
    pub embedding_std: Option<f64>,

    /// `none`, `label_only`, `example_only` or `label_and_example`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Class source for expansion: `gold` or `pred`.
    #[arg(long)]
    pub source: Option<String>,
    /// Solved examples per expansion.
    #[arg(long)]
    pub shots: Option<usize>,

    /// Record whose attention weights are exported.
    #[arg(long)]
    pub record: Option<String>,
    /// Text to export instead of the record's own text.
    #[arg(long)]
    pub text: Option<String>,
}

impl RunConfig {
    /// Keys in `file` replace those in `self`.
    pub fn overlay(self, file: RunConfig) -> Result<RunConfig> {
        let mut base = toml::Table::try_from(&self).context("serializing flags")?;
        for (k, v) in toml::Table::try_from(&file).context("serializing config file")? {
            base.insert(k, v);
        }
        Ok(base.try_into()?)
    }

    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn render(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.context("a seed is required (--seed or `seed` in the config file)")
    }

    pub fn out(&self) -> Result<&Path> {
        self.out.as_deref().context("an output directory is required (--out)")
    }

    /// Path-valued setting that must name an existing file.
    pub fn input(&self, value: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let path = value.clone().with_context(|| format!("--{name} is required"))?;
        if !path.is_file() {
            bail!("--{name} {} does not exist", path.display());
        }
        Ok(path)
    }

    pub fn level(&self) -> Result<&str> {
        self.level.as_deref().context("--level is required")
    }

    pub fn encoder(&self) -> Result<EncoderConfig> {
        let mut c = EncoderConfig::default();
        if let Some(v) = self.dim {
            c.dim = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.buckets {
            c.tokenizer.buckets = v;
        }
        if let Some(v) = self.embedding_std {
            c.embedding_std = v;
        }
        if let Some(s) = &self.ngram_orders {
            c.tokenizer.ngram_orders = s
                .split(',')
                .map(|o| o.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("bad ngram_orders `{s}`"))?;
        }
        Ok(c)
    }

    pub fn meta(&self) -> Result<MetaConfig> {
        let d = MetaConfig::default();
        let c = MetaConfig {
            inner_lr: self.inner_lr.unwrap_or(d.inner_lr),
            inner_steps: self.inner_steps.unwrap_or(d.inner_steps),
            outer_lr: self.outer_lr.unwrap_or(d.outer_lr),
            tasks_per_batch: self.tasks_per_batch.unwrap_or(d.tasks_per_batch),
            variant: parse_or(&self.variant, d.variant)?,
            average_over: parse_or(&self.average_over, d.average_over)?,
            way: self.way.unwrap_or(d.way),
            shot: self.shot.unwrap_or(d.shot),
            query: self.query.unwrap_or(d.query),
            iterations: self.iterations.unwrap_or(d.iterations),
            seed: self.seed()?,
            max_grad_norm: self.max_grad_norm.or(d.max_grad_norm),
            outer_optimizer: parse_or(&self.outer_optimizer, d.outer_optimizer)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        let d = EvalConfig::default();
        Ok(EvalConfig {
            way: self.way.unwrap_or(d.way),
            shot: self.shot.unwrap_or(d.shot),
            query: self.query.unwrap_or(d.query),
            episodes: self.episodes.unwrap_or(d.episodes),
            inner_lr: self.inner_lr.unwrap_or(d.inner_lr),
            inner_steps: self.inner_steps.unwrap_or(d.inner_steps),
            seed: self.seed()?,
        })
    }

    pub fn transfer(&self) -> Result<TransferConfig> {
        let d = TransferConfig::default();
        let c = TransferConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            finetune_steps: self.finetune_steps.unwrap_or(d.finetune_steps),
            finetune_lr: self.finetune_lr.unwrap_or(d.finetune_lr),
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn reader(&self) -> Result<ReaderConfig> {
        let d = ReaderConfig::default();
        Ok(ReaderConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr: self.lr.unwrap_or(d.lr),
            seed: self.seed()?,
        })
    }
}

pub fn parse_or<T>(value: &Option<String>, default: T) -> Result<T>
where
    T: std::str::FromStr<Err = metaqa::Error>,
{
    match value {
        None => Ok(default),
        Some(s) => Ok(s.parse()?),
    }
}
