use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use metaqa::bench;
use metaqa::data::synthetic::{generate, SyntheticSpec};
use metaqa::data::{
    build_meta_dataset, read_corpus, sample_episode, sample_episode_with, write_corpus, BuildParams, LabelMap,
    MetaDataset, QuestionRecord, Split, SplitManifest,
};
use metaqa::encoder::{read_checkpoint, write_checkpoint, Checkpoint, Encoder};
use metaqa::eval::{evaluate_fewshot, evaluate_transfer, export_attention, render_jsonl, render_table, EvalReport};
use metaqa::qa::{gold_training_set, run_qa, ExpansionMode, LabelSource, Predictor, QaRunConfig};
use metaqa::rng::{derive_seed, stream, sub_rng};
use metaqa::trainer::{initial_params, inner_adapt, meta_train_from, pretrain_supervised};
use serde::Serialize;

use crate::config::{parse_or, RunConfig};

/// Output directory of one invocation. Primary outputs are pure functions of
/// the inputs and config; wall-clock measurements go to `timing.log` only.
pub struct RunDir<'a> {
    root: &'a Path,
    timing: String,
}

impl<'a> RunDir<'a> {
    pub fn create(config: &'a RunConfig) -> Result<Self> {
        let root = config.out()?;
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        fs::write(root.join("config.toml"), config.render()?)?;
        Ok(Self { root, timing: String::new() })
    }

    pub fn path(&self, name: &str) -> std::path::PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(self.path(name), contents).with_context(|| format!("writing {name}"))
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        let mut out = String::new();
        for r in rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        self.write(name, out)
    }

    pub fn time(&mut self, stage: &str, start: Instant) {
        let secs = start.elapsed().as_secs_f64();
        let _ = writeln!(self.timing, "{stage}\t{secs:.3}s");
        eprintln!("{stage}: {secs:.1}s");
    }

    fn finish(self) -> Result<()> {
        fs::write(self.root.join("timing.log"), self.timing)?;
        Ok(())
    }
}

fn load_dataset(config: &RunConfig) -> Result<(Vec<QuestionRecord>, MetaDataset)> {
    let corpus = config.input(&config.corpus, "corpus")?;
    let manifest_path = config.input(&config.manifest, "manifest")?;
    let records = read_corpus(&corpus)?;
    let manifest: SplitManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    let dataset = MetaDataset::from_manifest(&records, &manifest)?;
    Ok((records, dataset))
}

fn load_checkpoint(config: &RunConfig) -> Result<(Encoder, metaqa::autodiff::ParamSet)> {
    let path = config.input(&config.checkpoint, "checkpoint")?;
    let ck = read_checkpoint(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok((Encoder::new(ck.config)?, ck.params))
}

fn write_reports(dir: &RunDir<'_>, reports: &[EvalReport]) -> Result<()> {
    dir.write("report.jsonl", render_jsonl(reports))?;
    dir.write("report.txt", render_table(reports))
}

/// Training curve rows without timings.
#[derive(Serialize)]
struct CurveRow {
    step: usize,
    loss: f64,
    accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    post_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    post_accuracy: Option<f64>,
}

pub fn synth_corpus(config: &RunConfig) -> Result<()> {
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let spec = match config.preset.as_deref().unwrap_or("signature") {
        "signature" => bench::signature_benchmark().corpus,
        "qa" => bench::qa_benchmark().corpus,
        other => bail!("unknown preset `{other}` (signature | qa)"),
    };
    let spec =
        SyntheticSpec { seed: config.seed()?, level: config.level.clone().unwrap_or(spec.level.clone()), ..spec };
    let corpus = generate(&spec)?;
    write_corpus(dir.path("corpus.jsonl"), &corpus.records)?;
    corpus.labels.write(dir.path("labels.tsv"))?;
    dir.time("generate", start);
    dir.finish()
}

pub fn build_dataset(config: &RunConfig) -> Result<()> {
    let corpus = config.input(&config.corpus, "corpus")?;
    let level = config.level()?;
    let seed = config.seed()?;
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let records = read_corpus(&corpus)?;
    let d = BuildParams::default();
    let params = BuildParams {
        min_per_class: config.min_per_class.unwrap_or(d.min_per_class),
        train_fraction: config.train_fraction.unwrap_or(d.train_fraction),
        way: config.way.unwrap_or(d.way),
    };
    let dataset = build_meta_dataset(&records, level, &params, seed)?;
    dir.write("manifest.json", serde_json::to_string_pretty(&dataset.manifest())? + "\n")?;
    dir.write("counts.tsv", dataset.stats().render())?;
    dir.time("build", start);
    dir.finish()
}

pub fn meta_train(config: &RunConfig) -> Result<()> {
    let (_, dataset) = load_dataset(config)?;
    let meta = config.meta()?;
    let (encoder, init) = match &config.checkpoint {
        Some(_) => load_checkpoint(config)?,
        None => {
            let encoder = Encoder::new(config.encoder()?)?;
            let init = initial_params(&encoder, meta.way, meta.seed);
            (encoder, init)
        }
    };
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let every = (meta.iterations / 20).max(1);
    let out = meta_train_from(&encoder, &dataset, &meta, init, |l| {
        if l.iteration % every == 0 || l.iteration + 1 == meta.iterations {
            eprintln!(
                "iteration {:>5}  pre {:.3}/{:.3}  post {:.3}/{:.3}",
                l.iteration, l.pre_loss, l.pre_accuracy, l.post_loss, l.post_accuracy
            );
        }
    })?;
    dir.time("meta-train", start);
    let curve: Vec<CurveRow> = out
        .log
        .iter()
        .map(|l| CurveRow {
            step: l.iteration,
            loss: l.pre_loss,
            accuracy: l.pre_accuracy,
            post_loss: Some(l.post_loss),
            post_accuracy: Some(l.post_accuracy),
        })
        .collect();
    dir.write_jsonl("train_log.jsonl", &curve)?;
    write_checkpoint(dir.path("checkpoint.bin"), &Checkpoint { config: encoder.config().clone(), params: out.params })?;
    dir.finish()
}

pub fn transfer_baseline(config: &RunConfig) -> Result<()> {
    let (_, dataset) = load_dataset(config)?;
    let transfer = config.transfer()?;
    let eval = config.eval()?;
    let encoder = Encoder::new(config.encoder()?)?;
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let pre = pretrain_supervised(&encoder, &dataset, &transfer)?;
    dir.time("pretrain", start);
    let curve: Vec<CurveRow> = pre
        .log
        .iter()
        .map(|l| CurveRow { step: l.epoch, loss: l.loss, accuracy: l.accuracy, post_loss: None, post_accuracy: None })
        .collect();
    dir.write_jsonl("pretrain_log.jsonl", &curve)?;
    write_checkpoint(
        dir.path("checkpoint.bin"),
        &Checkpoint { config: encoder.config().clone(), params: pre.params.clone() },
    )?;
    let start = Instant::now();
    let report =
        evaluate_transfer(&encoder, &pre.params, &dataset, &eval, transfer.finetune_steps, transfer.finetune_lr)?;
    dir.time("evaluate", start);
    write_reports(&dir, &[report])?;
    dir.finish()
}

pub fn eval_fewshot(config: &RunConfig) -> Result<()> {
    let (_, dataset) = load_dataset(config)?;
    let eval = config.eval()?;
    let (encoder, theta, method) = match &config.checkpoint {
        Some(_) => {
            let (e, p) = load_checkpoint(config)?;
            (e, p, "meta")
        }
        None => {
            let encoder = Encoder::new(config.encoder()?)?;
            let theta = initial_params(&encoder, eval.way, eval.seed);
            (encoder, theta, "random")
        }
    };
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let report = evaluate_fewshot(&encoder, &theta, &dataset, &eval, method)?;
    dir.time("evaluate", start);
    eprintln!("{method} {}-way {}-shot: {:.4} ± {:.4}", eval.way, eval.shot, report.mean, report.ci95);
    write_reports(&dir, &[report])?;
    dir.finish()
}

pub fn qa_run(config: &RunConfig) -> Result<()> {
    let (_, dataset) = load_dataset(config)?;
    let labels = LabelMap::read(config.input(&config.labels, "labels")?)?;
    let mode: ExpansionMode = parse_or(&config.mode, ExpansionMode::LabelAndExample)?;
    let source: LabelSource = parse_or(&config.source, LabelSource::Gold)?;
    let shots = if mode.uses_examples() { config.shots.unwrap_or(1) } else { 0 };
    let seed = config.seed()?;
    let reader_cfg = config.reader()?;
    let meta = match source {
        LabelSource::Pred if mode != ExpansionMode::None => Some(load_checkpoint(config)?),
        _ => None,
    };
    let reader = Encoder::new(config.encoder()?)?;
    let mut dir = RunDir::create(config)?;

    let start = Instant::now();
    let items = gold_training_set(&dataset, &labels, Split::Train, mode, shots, seed)?;
    let trained = metaqa::qa::train_reader(&reader, &items, &reader_cfg)?;
    dir.time("train-reader", start);
    let curve: Vec<CurveRow> = trained
        .log
        .iter()
        .map(|l| CurveRow { step: l.epoch, loss: l.loss, accuracy: l.accuracy, post_loss: None, post_accuracy: None })
        .collect();
    dir.write_jsonl("reader_log.jsonl", &curve)?;
    write_checkpoint(
        dir.path("reader.bin"),
        &Checkpoint { config: reader.config().clone(), params: trained.params.clone() },
    )?;

    let predictor = meta.as_ref().map(|(encoder, params)| Predictor {
        encoder,
        params,
        way: config.way.unwrap_or(5),
        shot: config.shot.unwrap_or(1),
        inner_lr: config.inner_lr.unwrap_or(0.05),
        inner_steps: config.inner_steps.unwrap_or(3),
    });
    let start = Instant::now();
    let test: Vec<_> = dataset.split_records(Split::Test).into_iter().map(|(_, r)| r).collect();
    let run = run_qa(
        &reader,
        &trained.params,
        &test,
        &dataset,
        &labels,
        &QaRunConfig { mode, shots, source, seed },
        predictor.as_ref(),
    )?;
    dir.time("answer", start);
    eprintln!("qa {mode} ({source}): {:.4} over {} questions", run.report.mean, test.len());
    dir.write_jsonl("answers.jsonl", &run.answers)?;
    write_reports(&dir, &[run.report])?;
    dir.finish()
}

pub fn inspect_attention(config: &RunConfig) -> Result<()> {
    let (_, dataset) = load_dataset(config)?;
    let (encoder, theta) = load_checkpoint(config)?;
    let seed = config.seed()?;
    let way = encoder.head_width(&theta)?;
    let shot = config.shot.unwrap_or(1);
    let inner_lr = config.inner_lr.unwrap_or(0.05);
    let inner_steps = config.inner_steps.unwrap_or(3);
    let mut rng = sub_rng(derive_seed(seed, stream::EPISODES), config.record.as_deref().unwrap_or(""));
    let (episode, text) = match &config.record {
        Some(id) => {
            let record = dataset
                .split_records(Split::Test)
                .into_iter()
                .chain(dataset.split_records(Split::Train))
                .map(|(_, r)| r)
                .find(|r| &r.id == id)
                .with_context(|| format!("record `{id}` is not in the dataset"))?;
            let class = record.label(dataset.level()).context("record has no label at the dataset level")?;
            let exclude: HashSet<String> = [id.clone()].into_iter().collect();
            let episode = sample_episode_with(&dataset, class, way, shot, 0, &exclude, &mut rng)?;
            (episode, config.text.clone().unwrap_or_else(|| record.classification_text()))
        }
        None => {
            let text = config.text.clone().context("--record or --text is required")?;
            (sample_episode(&dataset, Split::Test, way, shot, 1, &mut rng)?, text)
        }
    };
    let mut dir = RunDir::create(config)?;
    let start = Instant::now();
    let adapted = inner_adapt(&encoder, &theta, &episode.support_items(), way, inner_lr, inner_steps)?;
    let record = export_attention(&encoder, &text, &theta, &adapted)?;
    dir.time("attention", start);
    dir.write("attention.tsv", record.render())?;
    dir.finish()
}
