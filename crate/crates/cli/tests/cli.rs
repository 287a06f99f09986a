use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const IRGEN: &str = env!("CARGO_BIN_EXE_irgen");

/// A small, fast configuration rooted in `dir`.
fn tiny(dir: &Path) -> Vec<String> {
    let d = dir.display();
    [
        format!("data.embeddings={d}/data/emb.emb"),
        format!("data.labels={d}/data/labels.txt"),
        format!("data.splits={d}/data/splits.txt"),
        format!("data.artifacts={d}/artifacts"),
        "data.synthetic.classes=4".into(),
        "data.synthetic.per_class=20".into(),
        "data.synthetic.dim=8".into(),
        "tokenizer.levels=2".into(),
        "tokenizer.codebook_size=4".into(),
        "tokenizer.epochs=3".into(),
        "ar.hidden=16".into(),
        "ar.blocks=1".into(),
        "ar.heads=2".into(),
        "ar.epochs=3".into(),
        "search.beam_width=4".into(),
        "search.k=4".into(),
        "eval.ks=[1,4]".into(),
        "eval.mrr_ks=[1,2]".into(),
        "eval.bench_queries=5".into(),
        "eval.bench_repeats=1".into(),
    ]
    .into_iter()
    .flat_map(|s| ["--set".to_string(), s])
    .collect()
}

fn irgen(args: &[String], cmd: &[&str]) -> Output {
    Command::new(IRGEN)
        .args(args)
        .args(cmd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("irgen runs")
}

fn ok(args: &[String], cmd: &[&str]) {
    let out = irgen(args, cmd);
    assert!(
        out.status.success(),
        "{cmd:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train(args: &[String]) {
    for cmd in ["synth", "tokenize", "assign-ids", "train-ar"] {
        ok(args, &[cmd]);
    }
}

#[test]
fn pipeline_writes_results_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny(dir.path());
    train(&args);
    ok(&args, &["search"]);
    ok(&args, &["search", "--engine", "scan"]);
    ok(&args, &["eval"]);
    let art = dir.path().join("artifacts");
    for f in ["tokenizer.bin", "ids.bin", "scorer.bin", "results-generative.tsv", "results-scan.tsv", "metrics.tsv"] {
        assert!(art.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(art.join("manifest-eval.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["seeds"]["ar.seed"].is_u64());
}

#[test]
fn unknown_key_exits_with_config_code() {
    let out = irgen(&["--set".into(), "tokenizer.levelz=3".into()], &["show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tokenizer.levelz"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, r#"{"search": {"ivfpq": {"probe": 1}}}"#).unwrap();
    let out = irgen(&["--config".into(), path.display().to_string()], &["show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("search.ivfpq.probe"));
}

#[test]
fn corrupt_embeddings_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny(dir.path());
    ok(&args, &["synth"]);
    let emb = dir.path().join("data/emb.emb");
    let mut bytes = fs::read(&emb).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&emb, bytes).unwrap();
    let out = irgen(&args, &["tokenize"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_writes_one_row_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let args = tiny(dir.path());
    train(&args);
    ok(&args, &["bench", "--beam", "1,10,20,30"]);
    let tsv = fs::read_to_string(dir.path().join("artifacts/bench.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 5);
    let widths: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(widths, ["1", "10", "20", "30"]);
}

#[test]
fn same_config_gives_same_metrics() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let args = tiny(dir.path());
        train(&args);
        ok(&args, &["eval"]);
        fs::read_to_string(dir.path().join("artifacts/metrics.tsv")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn usage_errors_exit_2() {
    let out = irgen(&[], &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}
