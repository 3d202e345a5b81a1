//! Drives the `metaqa` binary through every command on a small
//! configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use metaqa::data::{read_corpus, MetaDataset, SplitManifest};
use metaqa::encoder::{read_checkpoint, Encoder};
use metaqa::qa::{answer_mc, expand_query, ExpansionMode};

const SMALL: &[&str] = &["--dim", "8", "--hidden", "8", "--buckets", "512", "--ngram-orders", "1"];

fn metaqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaqa")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = metaqa(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every command once, with outputs under `root`.
fn pipeline(root: &Path, seed: &str) {
    let d = |name: &str| root.join(name);
    let with = |cmd: &str, out: &str, extra: &[&str]| {
        let mut args = vec![cmd, "--seed", seed, "--out"];
        let out = d(out);
        args.push(p(&out));
        args.extend_from_slice(extra);
        ok(&args);
    };
    let corpus = d("corpus/corpus.jsonl");
    let labels = d("corpus/labels.tsv");
    let manifest = d("dataset/manifest.json");
    let meta_ck = d("meta/checkpoint.bin");
    let data = ["--corpus", p(&corpus), "--manifest", p(&manifest)];

    with("synth-corpus", "corpus", &["--preset", "qa"]);
    with("build-dataset", "dataset", &["--corpus", p(&corpus), "--level", "L1"]);
    let mut meta = data.to_vec();
    meta.extend_from_slice(SMALL);
    meta.extend_from_slice(&["--variant", "second_order", "--iterations", "10", "--inner-lr", "0.3"]);
    with("meta-train", "meta", &meta);
    let mut algo1 = data.to_vec();
    algo1.extend_from_slice(SMALL);
    algo1.extend_from_slice(&["--variant", "algorithm1", "--iterations", "5"]);
    with("meta-train", "meta-algorithm1", &algo1);

    let mut transfer = data.to_vec();
    transfer.extend_from_slice(SMALL);
    transfer.extend_from_slice(&["--epochs", "1", "--episodes", "20"]);
    with("transfer-baseline", "transfer", &transfer);

    let mut eval = data.to_vec();
    eval.extend_from_slice(&["--checkpoint", p(&meta_ck), "--episodes", "20", "--shot", "5"]);
    with("eval-fewshot", "eval-meta", &eval);
    let mut random = data.to_vec();
    random.extend_from_slice(SMALL);
    random.extend_from_slice(&["--episodes", "20"]);
    with("eval-fewshot", "eval-random", &random);

    for (out, mode, source) in [
        ("qa-none", "none", "gold"),
        ("qa-gold", "label_and_example", "gold"),
        ("qa-pred", "label_and_example", "pred"),
    ] {
        let mut qa = data.to_vec();
        qa.extend_from_slice(SMALL);
        qa.extend_from_slice(&[
            "--labels",
            p(&labels),
            "--checkpoint",
            p(&meta_ck),
            "--mode",
            mode,
            "--source",
            source,
            "--epochs",
            "2",
        ]);
        with("qa-run", out, &qa);
    }

    let mut attn = data.to_vec();
    attn.extend_from_slice(&["--checkpoint", p(&meta_ck), "--record", "syn-50-003"]);
    with("inspect-attention", "attention", &attn);
}

fn outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else if path.file_name().unwrap() == "config.toml" {
                // copied configs name the run's own (temporary) paths
                let text = std::fs::read_to_string(&path).unwrap().replace(p(root), "<root>");
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), text.into_bytes());
            } else if path.file_name().unwrap() != "timing.log" {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

#[test]
fn pipeline_runs_and_replays_byte_identically() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "21");
    pipeline(b.path(), "21");
    assert!(start.elapsed() < Duration::from_secs(600));

    let (first, second) = (outputs(a.path()), outputs(b.path()));
    for stage in ["corpus/corpus.jsonl", "dataset/manifest.json", "meta/checkpoint.bin", "qa-pred/answers.jsonl"] {
        assert!(first.contains_key(Path::new(stage)), "missing {stage}");
    }
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (name, bytes) in &first {
        assert!(&second[name] == bytes, "{} differs between identical runs", name.display());
    }
    for dir in ["meta", "qa-pred", "attention", "eval-meta"] {
        assert!(a.path().join(dir).join("config.toml").is_file());
        assert!(a.path().join(dir).join("timing.log").is_file());
    }
    let attention = String::from_utf8(first[Path::new("attention/attention.tsv")].clone()).unwrap();
    assert!(attention.starts_with("token\tweight_before\tweight_after\n"));
}

#[test]
fn qa_mode_none_equals_direct_answer_sweep() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "4");
    let root = dir.path();
    let records = read_corpus(root.join("corpus/corpus.jsonl")).unwrap();
    let manifest: SplitManifest =
        serde_json::from_str(&std::fs::read_to_string(root.join("dataset/manifest.json")).unwrap()).unwrap();
    let ds = MetaDataset::from_manifest(&records, &manifest).unwrap();
    let ck = read_checkpoint(root.join("qa-none/reader.bin")).unwrap();
    let reader = Encoder::new(ck.config.clone()).unwrap();

    let answers: Vec<serde_json::Value> = std::fs::read_to_string(root.join("qa-none/answers.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let test = ds.split_records(metaqa::data::Split::Test);
    assert_eq!(answers.len(), test.len());
    let mut correct = 0;
    for ((_, r), a) in test.iter().zip(&answers) {
        assert_eq!(a["id"], r.id.as_str());
        let input = expand_query(&r.question, ExpansionMode::None, None, &[]).unwrap();
        let direct = answer_mc(&reader, &ck.params, &input, &r.option_texts()).unwrap();
        assert_eq!(a["chosen"].as_u64().unwrap() as usize, direct.index);
        correct += usize::from(Some(direct.index) == r.answer_index());
    }
    let report: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(root.join("qa-none/report.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(report["mean"].as_f64().unwrap(), correct as f64 / test.len() as f64);
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let out = metaqa(&["synth-corpus", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = metaqa(&["synth-corpus", "--seed", "1", "--out", p(dir.path()), "--no-such-flag", "3"]);
    assert!(!out.status.success());
}

#[test]
fn config_file_keys_override_flags_and_are_copied() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 9\npreset = \"qa\"\n").unwrap();
    let out = dir.path().join("out");
    ok(&["synth-corpus", "--seed", "1", "--out", p(&out), "--config", p(&cfg)]);
    let copied = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(copied.contains("seed = 9"), "{copied}");
    let direct = dir.path().join("direct");
    ok(&["synth-corpus", "--seed", "9", "--preset", "qa", "--out", p(&direct)]);
    assert_eq!(std::fs::read(out.join("corpus.jsonl")).unwrap(), std::fs::read(direct.join("corpus.jsonl")).unwrap());

    std::fs::write(&cfg, "seed = 9\nsede = 2\n").unwrap();
    assert!(!metaqa(&["synth-corpus", "--out", p(&out), "--config", p(&cfg)]).status.success());
}

#[test]
fn manifests_depend_only_on_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    ok(&["synth-corpus", "--seed", "2", "--out", p(&corpus_dir)]);
    let corpus = corpus_dir.join("corpus.jsonl");
    let build = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        ok(&["build-dataset", "--seed", seed, "--corpus", p(&corpus), "--level", "L1", "--out", p(&out)]);
        std::fs::read(out.join("manifest.json")).unwrap()
    };
    assert_eq!(build("5", "a"), build("5", "b"));
    assert_ne!(build("5", "a"), build("6", "c"));
}

#[test]
fn missing_label_level_names_the_level() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    ok(&["synth-corpus", "--seed", "2", "--out", p(&corpus_dir)]);
    let out = metaqa(&[
        "build-dataset",
        "--seed",
        "1",
        "--corpus",
        p(&corpus_dir.join("corpus.jsonl")),
        "--level",
        "L7",
        "--out",
        p(&dir.path().join("ds")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`L7`"));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = metaqa(&[
        "eval-fewshot",
        "--seed",
        "1",
        "--corpus",
        p(&dir.path().join("absent.jsonl")),
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.jsonl"));
}

#[test]
fn shipped_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["signature", "qa"] {
        let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
        let out = dir.path().join(name);
        ok(&["synth-corpus", "--seed", "1", "--preset", name, "--config", p(&cfg), "--out", p(&out)]);
    }
}
