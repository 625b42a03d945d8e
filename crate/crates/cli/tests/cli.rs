use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rsp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsp"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn rsp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "rsp failed ({:?}): {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

const SMALL: &[&str] = &["--seed", "5", "--epochs", "2", "--batch-size", "32", "--finetune-epochs", "1"];

fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = extra.to_vec();
    v.extend_from_slice(SMALL);
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_data_dir_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = rsp(&["train-baseline", "--dataset", "mnist"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data_dir"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\n[rsp]\nepsilonn = 0.2\n").unwrap();
    let o = rsp(&["train-baseline", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilonn"));
}

#[test]
fn invalid_epsilon_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = rsp(&["compress", "--epsilon", "0", "--from-scratch"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_numeric_status() {
    let dir = TempDir::new().unwrap();
    let o = rsp(&with(&["train-baseline", "--out", "run", "--learning-rate", "1e6"]), dir.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compress_without_baseline_needs_from_scratch() {
    let dir = TempDir::new().unwrap();
    let o = rsp(&with(&["compress", "--out", "run"]), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn epsilon_one_leaves_the_model_unchanged() {
    let dir = TempDir::new().unwrap();
    ok(rsp(&with(&["compress", "--out", "run", "--from-scratch", "--epsilon", "1.0"]), dir.path()));
    let m = json(&dir.path().join("run/metrics.json"));
    assert_eq!(m["compression_ratio"].as_f64(), Some(1.0));
    assert_eq!(m["flops_speedup"].as_f64(), Some(1.0));
    assert_eq!(m["baseline"]["widths"], m["pruned"]["widths"]);
}

#[test]
fn full_run_writes_a_consistent_run_directory() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(rsp(&with(&["train-baseline", "--out", "run"]), d));
    ok(rsp(&with(&["compress", "--out", "run", "--lambda0", "5e-3", "--rounds", "2"]), d));
    for f in [
        "config.toml",
        "seeds.json",
        "baseline.rspc",
        "pruned.rspc",
        "report.json",
        "history.csv",
        "summary.csv",
        "metrics.json",
        "status.json",
        "training_log.jsonl",
    ] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    assert_eq!(json(&d.join("run/status.json"))["status"], "completed");

    // evaluating the saved model reproduces the accuracy stored with it
    let eval = ok(rsp(&with(&["evaluate", "--checkpoint", "run/pruned.rspc", "--format", "json-lines"]), d));
    let line: serde_json::Value = serde_json::from_str(stdout(&eval).lines().next().unwrap()).unwrap();
    let metrics = json(&d.join("run/metrics.json"));
    assert_eq!(line["metrics"]["test_accuracy"], metrics["pruned"]["test_accuracy"]);
    assert_eq!(line["metrics"]["flops"], metrics["pruned"]["flops"]);

    // one history row per completed round
    let report = json(&d.join("run/report.json"));
    let rounds = report["history"]["records"].as_array().unwrap().len();
    let csv = stdout(&ok(rsp(&["report", "run", "--format", "csv"], d)));
    let history_rows = csv.split("\n\n").next().unwrap().lines().count() - 1;
    assert_eq!(history_rows, rounds);
    assert!((1..=2).contains(&rounds));

    let table = stdout(&ok(rsp(&["report", "run/report.json"], d)));
    assert!(table.contains("pruned"));
}

#[test]
fn tampered_report_is_rejected() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(rsp(&with(&["compress", "--out", "run", "--from-scratch"]), d));
    let mut report = json(&d.join("run/report.json"));
    report["compression_ratio"] = serde_json::json!(123.0);
    std::fs::write(d.join("bad.json"), report.to_string()).unwrap();
    assert_eq!(rsp(&["report", "bad.json"], d).status.code(), Some(2));

    report["meta"]["schema"] = serde_json::json!(999);
    std::fs::write(d.join("bad.json"), report.to_string()).unwrap();
    assert_eq!(rsp(&["report", "bad.json"], d).status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(rsp(&with(&["compress", "--out", out, "--from-scratch", "--lambda0", "5e-3"]), d));
    }
    for f in ["baseline.rspc", "pruned.rspc", "summary.csv", "metrics.json", "seeds.json"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    let hash = |out: &str| json(&d.join(out).join("report.json"))["meta"]["config_hash"].clone();
    assert_eq!(hash("a"), hash("b"));
}
