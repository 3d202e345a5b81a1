//! `metaqa` command-line harness.
//!
//! Every command takes the same [`config::RunConfig`] flags (plus `--config
//! FILE`, whose keys override flags), writes into `--out`, and copies the
//! effective configuration there as `config.toml`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "metaqa", version, about = "Few-shot question classification and classification-informed QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Invocation {
    /// TOML file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (`corpus.jsonl`, `labels.tsv`).
    SynthCorpus(Invocation),
    /// Validate a corpus and split its classes (`manifest.json`, `counts.tsv`).
    BuildDataset(Invocation),
    /// Meta-train the classifier on meta-train episodes (`checkpoint.bin`).
    MetaTrain(Invocation),
    /// Supervised pretraining, then per-episode fine-tuning on meta-test.
    TransferBaseline(Invocation),
    /// Few-shot evaluation on meta-test episodes (`report.jsonl`, `report.txt`).
    EvalFewshot(Invocation),
    /// Train a reader for one expansion mode and answer the meta-test questions.
    QaRun(Invocation),
    /// Attention weights of one text before and after adaptation (`attention.tsv`).
    InspectAttention(Invocation),
}

fn resolve(inv: Invocation) -> Result<RunConfig> {
    match inv.config {
        None => Ok(inv.run),
        Some(path) => inv.run.overlay(RunConfig::read(&path)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (cmd, inv): (fn(&RunConfig) -> Result<()>, Invocation) = match cli.command {
        Command::SynthCorpus(i) => (commands::synth_corpus, i),
        Command::BuildDataset(i) => (commands::build_dataset, i),
        Command::MetaTrain(i) => (commands::meta_train, i),
        Command::TransferBaseline(i) => (commands::transfer_baseline, i),
        Command::EvalFewshot(i) => (commands::eval_fewshot, i),
        Command::QaRun(i) => (commands::qa_run, i),
        Command::InspectAttention(i) => (commands::inspect_attention, i),
    };
    let config = resolve(inv)?;
    config.seed()?;
    cmd(&config)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
