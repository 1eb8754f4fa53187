use std::path::Path;
use std::process::{Command, Output};

use emargin_core::eval::EvalReport;
use emargin_core::signal::{read_batch, write_csv, RawSeries};

const CONFIG: &str = r#"{
  "source": {"synth": {"num_seqs": 10, "seq_len": 30, "dim": 6}},
  "encoder": {"hidden_dims": [12, 12], "output_dim": 8},
  "train": {"iterations": 12, "log_every": 0},
  "eval": {"probe": {"epochs": 40}}
}"#;

fn emargin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emargin"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = emargin(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), config).unwrap();
    dir
}

#[test]
fn synth_is_reproducible_and_labelled() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["--config", "run.json", "--out", "a", "synth"]);
    ok(d, &["--config", "run.json", "--out", "b", "synth"]);
    for f in ["data.emsb", "train.emsb", "test.emsb", "manifest.json"] {
        let a = std::fs::read(d.join("a/data").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.join("b/data").join(f)).unwrap(), "{f}");
    }
    let batch = read_batch(d.join("a/data/data.emsb")).unwrap();
    assert_eq!(batch.classes(), vec![0, 1, 2]);

    ok(d, &["--config", "run.json", "--out", "c", "--seed", "9", "synth"]);
    assert_ne!(
        std::fs::read(d.join("a/data/data.emsb")).unwrap(),
        std::fs::read(d.join("c/data/data.emsb")).unwrap()
    );
}

#[test]
fn invalid_synth_spec_is_a_usage_error() {
    let dir = workspace(r#"{"source": {"synth": {"num_classes": 1}}}"#);
    assert_eq!(emargin(dir.path(), &["--config", "run.json", "--out", "o", "synth"]).status.code(), Some(2));
    let dir = workspace(r#"{"seq_len": "long"}"#);
    assert_eq!(emargin(dir.path(), &["--config", "run.json", "synth"]).status.code(), Some(2));
}

fn write_recording(path: &Path, n: usize) {
    let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.2).sin()).collect();
    let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).cos() * ((i / 150) % 2) as f64).collect();
    let labels = (0..n).map(|i| ((i / 150) % 2) as i32).collect();
    let series = RawSeries::new(vec!["x".into(), "y".into()], vec![a, b], 50.0, Some(labels)).unwrap();
    write_csv(&series, path).unwrap();
}

#[test]
fn preprocess_builds_stft_batches() {
    let dir = workspace(r#"{"dataset": "rec", "seq_len": 8}"#);
    let d = dir.path();
    write_recording(&d.join("rec.csv"), 2000);
    ok(d, &["--config", "run.json", "--out", "o", "preprocess", "--csv", "rec.csv"]);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("o/data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dim"], 52);
    assert_eq!(manifest["seq_len"], 8);
    // 79 frames make 9 windows of 8
    assert_eq!(manifest["sequences"], 9);
    let hist: u64 = manifest["class_histogram"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(hist, 72);

    let first = std::fs::read(d.join("o/data/manifest.json")).unwrap();
    ok(d, &["--config", "run.json", "--out", "o", "preprocess", "--csv", "rec.csv"]);
    assert_eq!(first, std::fs::read(d.join("o/data/manifest.json")).unwrap());
}

#[test]
fn preprocess_data_errors_exit_one() {
    let dir = workspace(r#"{"seq_len": 500}"#);
    let d = dir.path();
    write_recording(&d.join("rec.csv"), 2000);
    assert_eq!(emargin(d, &["--config", "run.json", "preprocess", "--csv", "rec.csv"]).status.code(), Some(1));
    std::fs::write(d.join("bad.csv"), "x,y,label\n1,2,0\n3,oops,0\n").unwrap();
    let o = emargin(d, &["preprocess", "--csv", "bad.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row"));
}

#[test]
fn pretrain_writes_trace_and_checkpoint() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["--config", "run.json", "--out", "o", "synth"]);
    for loss in ["emargin", "infonce"] {
        ok(d, &["--config", "run.json", "--out", "o", "--seed", "4", "pretrain", "--loss", loss]);
        let run = d.join(format!("o/{loss}-seed4"));
        let trace = std::fs::read_to_string(run.join("loss_trace.csv")).unwrap();
        let rows: Vec<&str> = trace.lines().collect();
        assert_eq!(rows[0], "step,loss");
        assert_eq!(rows.len(), 13);
        assert!(rows[1..].iter().all(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap().is_finite()));
        assert!(run.join("checkpoint.emgn").exists());
    }
    ok(d, &["--config", "run.json", "--out", "o", "pretrain", "--iterations", "3"]);
    let trace = std::fs::read_to_string(d.join("o/emargin-seed1/loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
}

#[test]
fn missing_data_and_diverging_training_exit_codes() {
    let dir = workspace(r#"{
      "source": {"synth": {"num_seqs": 6, "seq_len": 20, "dim": 4}},
      "encoder": {"hidden_dims": [6, 6], "output_dim": 4},
      "train": {"iterations": 5, "learning_rate": 1e300, "loss_kind": "infonce"}
    }"#);
    let d = dir.path();
    assert_eq!(emargin(d, &["--config", "run.json", "--out", "o", "pretrain"]).status.code(), Some(1));
    ok(d, &["--config", "run.json", "--out", "o", "synth"]);
    let o = emargin(d, &["--config", "run.json", "--out", "o", "pretrain"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("o/infonce-seed1/checkpoint.emgn").exists());
}

#[test]
fn eval_reports_per_assignment_and_exports() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["--config", "run.json", "--out", "o", "synth"]);
    ok(d, &["--config", "run.json", "--out", "o", "pretrain"]);
    let ck = "o/emargin-seed1/checkpoint.emgn";
    ok(d, &["--config", "run.json", "--out", "o", "eval", "--checkpoint", ck, "--export-embeddings"]);
    ok(d, &["--config", "run.json", "--out", "o", "eval", "--checkpoint", ck, "--assignment", "labels"]);
    ok(d, &["--config", "run.json", "--out", "o", "eval", "--random-init"]);
    let reports = d.join("o/reports");
    let km: EvalReport = serde_json::from_slice(&std::fs::read(reports.join("emargin-seed1-kmeans.json")).unwrap()).unwrap();
    let lb: EvalReport = serde_json::from_slice(&std::fs::read(reports.join("emargin-seed1-labels.json")).unwrap()).unwrap();
    assert_eq!(km.loss_kind, "emargin");
    assert_eq!(km.k, 3);
    assert_eq!(km.accuracy, lb.accuracy);
    assert_ne!(km.config_digest, lb.config_digest);
    assert!(reports.join("random-seed1-kmeans.json").exists());
    let csv = std::fs::read_to_string(reports.join("emargin-seed1-kmeans.embeddings.csv")).unwrap();
    assert!(csv.starts_with("seq_id,t,label,dim_0,"));

    let before = std::fs::read(reports.join("emargin-seed1-kmeans.json")).unwrap();
    ok(d, &["--config", "run.json", "--out", "o", "eval", "--checkpoint", ck]);
    assert_eq!(before, std::fs::read(reports.join("emargin-seed1-kmeans.json")).unwrap());
}

#[test]
fn eval_rejects_cluster_count_mismatch() {
    let dir = workspace(&CONFIG.replace(r#""eval": {"#, r#""eval": {"k": 5, "#));
    let d = dir.path();
    ok(d, &["--config", "run.json", "--out", "o", "synth"]);
    assert_eq!(emargin(d, &["--config", "run.json", "--out", "o", "eval", "--random-init"]).status.code(), Some(2));
    assert_eq!(emargin(d, &["--out", "o", "eval"]).status.code(), Some(2));
}

#[test]
fn compare_tables_and_rejects_duplicates() {
    let dir = workspace(CONFIG);
    let d = dir.path();
    ok(d, &["--config", "run.json", "--out", "o", "synth"]);
    for seed in ["1", "2", "3"] {
        ok(d, &["--config", "run.json", "--out", "o", "--seed", seed, "eval", "--random-init"]);
    }
    let out = ok(d, &["--out", "o", "compare", "o/reports"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("## synth"));
    assert!(table.contains("| random | kmeans | 1,2,3 |"));
    assert_eq!(table, std::fs::read_to_string(d.join("o/comparison.md")).unwrap());

    let one = "o/reports/random-seed1-kmeans.json";
    assert_eq!(emargin(d, &["--out", "o", "compare", one, one]).status.code(), Some(1));
    assert_eq!(emargin(d, &["--out", "o", "compare", "nowhere.json"]).status.code(), Some(1));
}

#[test]
fn thread_count_must_be_positive() {
    let dir = workspace(CONFIG);
    let o = Command::new(env!("CARGO_BIN_EXE_emargin"))
        .args(["--config", "run.json", "synth"])
        .current_dir(dir.path())
        .env("EMARGIN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
