use std::path::Path;
use std::process::{Command, Output};

fn textclf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textclf"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const SYNTH_CONFIG: &str = r#"{
  "train": {"d_model": 8, "layers": 1, "epochs": 30, "seed": 1},
  "data": {"source": "synthetic", "synthetic": {"train_per_class": 30, "test_per_class": 10}}
}"#;

#[test]
fn bad_flags_exit_2_with_usage() {
    let out = textclf(&["train", "--nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(textclf(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"train": {"learning_rate": 0.1}}"#,
    );
    let ckpt = dir.path().join("m.ckpt");
    let out = textclf(&["train", "--config", &cfg, "--out", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("c.json"),
        r#"{"data": {"train_csv": "absent.csv"}}"#,
    );
    let out = textclf(&["train", "--config", &cfg, "--out", "/dev/null"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SYNTH_CONFIG);
    let ckpt = dir.path().join("m.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    let out = textclf(&["train", "--config", &cfg, "--out", ckpt_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    let log = stderr(&out);
    assert!(log.contains("sha256") && log.contains("seed 1"), "{log}");

    let history = std::fs::read_to_string(dir.path().join("m.ckpt.loss.csv")).unwrap();
    assert!(history.starts_with("epoch,loss\n1,"));
    assert_eq!(history.lines().count(), 31);

    // Class index 1 maps to the first category.
    let data = write(
        &dir.path().join("test.csv"),
        "\"1\",\"c0w1 c0w2 n3 c0w4\",\"c0w5\"\n\"2\",\"c1w1 n2 c1w7\",\"c1w3 c1w0\"\n",
    );
    let out = textclf(&["evaluate", "--ckpt", ckpt_s, "--data", &data]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accuracy"], 1.0);
    assert_eq!(
        report["confusion"]["counts"],
        serde_json::json!([[1, 0], [0, 1]])
    );
    assert!(stderr(&out).contains("sha256"));
}

#[test]
fn evaluate_with_mismatched_vocabulary_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SYNTH_CONFIG);
    let ckpt = dir.path().join("m.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();
    assert!(textclf(&["train", "--config", &cfg, "--out", ckpt_s])
        .status
        .success());
    let vocab = write(&dir.path().join("vocab.txt"), "<pad>\n<unk>\nalpha\nbeta\n");
    let data = write(&dir.path().join("d.csv"), "\"1\",\"alpha\",\"beta\"\n");
    let out = textclf(&[
        "evaluate", "--ckpt", ckpt_s, "--data", &data, "--vocab", &vocab,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("dimension mismatch"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn evaluate_rejects_a_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = write(&dir.path().join("m.ckpt"), "ATPLCKP1 but not really");
    let data = write(&dir.path().join("d.csv"), "\"1\",\"a\",\"b\"\n");
    let out = textclf(&["evaluate", "--ckpt", &ckpt, "--data", &data]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweeps_write_sorted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SYNTH_CONFIG);
    let csv = dir.path().join("h.csv");
    let out = textclf(&[
        "sweep-hidden",
        "--config",
        &cfg,
        "--dims",
        "8,4",
        "--seeds",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| &l[..l.find(',').unwrap() + 2])
        .collect();
    assert_eq!(keys, vec!["4,0", "4,1", "8,0", "8,1"]);

    let out = textclf(&[
        "sweep-imbalance",
        "--config",
        &cfg,
        "--ratios",
        "1,3",
        "--seeds",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("setting,seed,precision,recall,f1,auc\n1,0,"));
}

#[test]
fn imbalance_ratios_must_increase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("c.json"), SYNTH_CONFIG);
    let out = textclf(&[
        "sweep-imbalance",
        "--config",
        &cfg,
        "--ratios",
        "3,1",
        "--seeds",
        "1",
        "--out",
        "/dev/null",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_train_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("s.ckpt");
    let out = textclf(&["synth-train", "--out", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["train_accuracy"].as_f64().unwrap() >= 0.99);
    assert!(summary["test_accuracy"].as_f64().unwrap() >= 0.95);
    assert!(ckpt.is_file());
}

// The exit status must agree with the printed per-group verdicts.
#[test]
fn gradcheck_exit_status_matches_its_report() {
    let out = textclf(&["gradcheck", "--seeds", "2", "--verbose"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let groups = text
        .lines()
        .filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL "))
        .count();
    let failed = text.lines().filter(|l| l.starts_with("FAIL ")).count();
    assert_eq!(groups, 3 * 2 * 26);
    let summary = text.lines().last().unwrap();
    assert_eq!(
        summary,
        format!(
            "{} of {} parameter groups within 1e-6",
            groups - failed,
            groups
        )
    );
    assert_eq!(out.status.success(), failed == 0);
}
