use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use irts_core::models::ModelConfig;
use irts_core::train::{Checkpoint, TrainConfig, METRICS_HEADER};

fn irts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irts"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = irts(dir, args);
    assert!(out.status.success(), "irts {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, classes: usize) {
    let cfg = TrainConfig {
        model: ModelConfig {
            classes,
            ..ModelConfig::tiny(3)
        },
        batch_size: 16,
        ..Default::default()
    };
    std::fs::write(dir.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
}

fn trained(dir: &Path, classes: usize) {
    write_config(dir, classes);
    let mut gen = vec!["generate", "--n", "60", "--seed", "2", "--out", "data.jsonl"];
    if classes > 0 {
        gen.push("--labeled");
    }
    ok(dir, &gen);
    ok(dir, &["train", "--data", "data.jsonl", "--config", "cfg.json", "--epochs", "2"]);
}

#[test]
fn generate_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--n", "30", "--seed", "4", "--labeled", "--out", "a.jsonl"]);
    ok(d, &["generate", "--n", "30", "--seed", "4", "--labeled", "--out", "b.jsonl"]);
    ok(d, &["generate", "--n", "30", "--seed", "5", "--labeled", "--out", "c.jsonl"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));

    let manifest: Value = serde_json::from_slice(&read("a.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["summary"]["cases"], 30);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&irts(d, &["generate", "--n", "-3", "--out", "x.jsonl"])), 2);
    assert_eq!(code(&irts(d, &["frobnicate"])), 2);
    assert_eq!(code(&irts(d, &["gradcheck", "--op", "no_such_op"])), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_irts"))
        .current_dir(d)
        .env("IRTS_PRECISION", "f16")
        .args(["generate", "--n", "3", "--out", "x.jsonl"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("IRTS_PRECISION"));
    assert!(!d.join("x.jsonl").exists());
}

#[test]
fn gradcheck_single_op_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--op", "add"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("all 1 checks passed"));
}

#[test]
fn train_metrics_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, 0);
    let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let keys: Vec<(usize, usize)> = lines
        .map(|l| {
            let mut f = l.split(',');
            (f.next().unwrap().parse().unwrap(), f.next().unwrap().parse().unwrap())
        })
        .collect();
    assert!(!keys.is_empty());
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "{keys:?}");
    assert_eq!(keys.last().unwrap().0, 2);

    let manifest: Value = serde_json::from_slice(&std::fs::read(d.join("model.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["summary"]["epochs"], 2);
}

#[test]
fn impute_writes_grid_and_observations() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, 0);
    ok(d, &["impute", "--ckpt", "model.ckpt", "--data", "data.jsonl", "--case", "3", "--case", "7", "--samples", "2"]);
    let text = std::fs::read_to_string(d.join("imputations.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);

    let data = irts_core::data::Dataset::load(d.join("data.jsonl")).unwrap();
    for (row, case) in rows.iter().zip([3usize, 7]) {
        assert_eq!(row["case"], case);
        let grid = row["grid"].as_array().unwrap();
        assert_eq!(grid.len(), 200);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[199], 1.0);
        let obs: Vec<(usize, f64, f64)> = serde_json::from_value(row["observations"].clone()).unwrap();
        let expected: Vec<(usize, f64, f64)> = data.cases[case]
            .channels
            .iter()
            .enumerate()
            .flat_map(|(c, o)| o.iter().map(move |&(t, x)| (c, t, x)))
            .collect();
        assert_eq!(obs, expected);
        let samples: Vec<Vec<Vec<f64>>> = serde_json::from_value(row["samples"].clone()).unwrap();
        assert_eq!(samples.len(), 2);
        assert!(samples.iter().all(|s| s.len() == 3 && s.iter().all(|c| c.len() == 200)));
        assert!(samples.iter().flatten().flatten().all(|v| v.is_finite()));
    }

    let out = irts(d, &["impute", "--ckpt", "model.ckpt", "--data", "data.jsonl", "--case", "60"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("case 60"));
}

#[test]
fn classify_requires_classifier_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, 0);
    let out = irts(d, &["classify", "--ckpt", "model.ckpt", "--data", "data.jsonl"]);
    assert_eq!(code(&out), 4);

    let labeled = tempfile::tempdir().unwrap();
    let l = labeled.path();
    trained(l, 2);
    ok(l, &["generate", "--n", "10", "--seed", "3", "--out", "unlabeled.jsonl"]);
    let out = irts(l, &["classify", "--ckpt", "model.ckpt", "--data", "unlabeled.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("without labels"));

    let out = ok(l, &["classify", "--ckpt", "model.ckpt", "--data", "data.jsonl"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("AUC "));
    let csv = std::fs::read_to_string(l.join("predictions.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,label,predicted,logp_0,logp_1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 60);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], i.to_string());
        let lp: Vec<f64> = f[3..].iter().map(|v| v.parse().unwrap()).collect();
        let best = if lp[1] > lp[0] { "1" } else { "0" };
        assert_eq!(f[2], best);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn nonfinite_parameters_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    trained(d, 0);
    let mut ckpt = Checkpoint::load(d.join("model.ckpt")).unwrap();
    for (_, t) in &mut ckpt.params {
        t.data_mut().fill(f64::NAN);
    }
    ckpt.save(d.join("bad.ckpt")).unwrap();
    let out = irts(d, &["train", "--data", "data.jsonl", "--resume", "bad.ckpt", "--epochs", "3", "--ckpt", "out.ckpt"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("out.ckpt").exists());
    let manifest: Value = serde_json::from_slice(&std::fs::read(d.join("out.ckpt.manifest.json")).unwrap()).unwrap();
    assert_ne!(manifest["status"], "ok");
}
