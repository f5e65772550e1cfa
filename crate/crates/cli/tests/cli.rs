use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sgamma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgamma"))
        .args(args)
        .env("SGAMMA_WORKERS", "2")
        .output()
        .expect("run sgamma")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

/// The coincidence config with fewer epochs, written next to the outputs.
fn short_coincidence(dir: &Path, epochs: usize) -> PathBuf {
    let text = std::fs::read_to_string(config("coincidence.toml")).unwrap();
    let text = text
        .lines()
        .map(|l| if l.starts_with("epochs") { format!("epochs = {epochs}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_then_eval_trace_and_density() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_coincidence(dir.path(), 2);
    let out_dir = dir.path().join("run");
    let out = sgamma(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert_eq!(summary["epochs"], 2);
    assert_eq!(String::from_utf8_lossy(&out.stderr).matches("epoch ").count(), 2);
    let ck = out_dir.join("checkpoint.sgck");
    assert!(ck.exists() && out_dir.join("metrics.csv").exists() && out_dir.join("summary.json").exists());

    let eval = sgamma(&["eval", "--checkpoint", ck.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(eval.status.success());
    let report = json(&eval);
    assert_eq!(report["samples"], 400);
    assert_eq!(report["epoch"], 2);
    assert!(out_dir.join("eval.json").exists());

    let trace_dir = dir.path().join("traces");
    let trace = sgamma(&[
        "trace",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--neuron",
        "0:1",
        "--out-dir",
        trace_dir.to_str().unwrap(),
    ]);
    assert!(trace.status.success(), "{}", String::from_utf8_lossy(&trace.stderr));
    assert!(trace_dir.join("trace_l0_n1.csv").exists());
    assert!(trace_dir.join("buckets_l0_n1.csv").exists());

    let density = sgamma(&["density", "--checkpoint", ck.to_str().unwrap()]);
    assert!(density.status.success());
    assert_eq!(json(&density)["samples"], 400);
}

#[test]
fn resume_extends_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = out_dir.to_str().unwrap();
    let cfg = short_coincidence(dir.path(), 1);
    assert!(sgamma(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", out]).status.success());
    let cfg = short_coincidence(dir.path(), 2);
    let ck = out_dir.join("checkpoint.sgck");
    let resumed = sgamma(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", out, "--checkpoint", ck.to_str().unwrap()]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    assert_eq!(json(&resumed)["epochs"], 2);
    let rows = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2 + 2);
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let ok = sgamma(&["gradcheck", "--nets", "3"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(json(&ok)["passed"], true);

    let bad = sgamma(&["gradcheck", "--nets", "2", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(json(&bad)["passed"], false);
}

#[test]
fn kernel_dump_writes_one_row_per_bucket_and_lag() {
    let dir = tempfile::tempdir().unwrap();
    let out = sgamma(&[
        "kernel-dump",
        "--config",
        config("coincidence.toml").to_str().unwrap(),
        "--horizon",
        "20",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("kernel.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,tau,kappa"));
    assert_eq!(lines.count(), 25 * 20);
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let out = sgamma(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    let out = sgamma(&["eval", "--checkpoint", "/nonexistent/ck.sgck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nbukets = 3\n[task]\nkind = \"delay\"\n").unwrap();
    let out = sgamma(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
