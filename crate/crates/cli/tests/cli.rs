use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn plan_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plan-cli"))
        .args(args)
        .env_remove("PLAN_OUT_DIR")
        .env_remove("PLAN_WORKERS")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({}): {}", e, last))
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn unknown_stage_is_a_usage_error() {
    let out = plan_cli(&["frobnicate", "--config", "x.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn missing_config_file_reports_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = plan_cli(&["synth-data", "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let out = plan_cli(&["synth-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "format");
}

#[test]
fn out_of_order_stage_names_its_remedy() {
    let dir = tempfile::tempdir().unwrap();
    let out = plan_cli(&[
        "ksame",
        "--config",
        smoke_config().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_json(&out);
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["message"].as_str().unwrap().contains("plan-cli"));
}

#[test]
fn full_smoke_run_then_rerun_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let base = ["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    let out = plan_cli(&[&["all"], &base[..], &["--workers", "2"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 8);
    assert!(lines.iter().all(|l| l["skipped"] == false));
    assert!(dir.path().join("eval/summary.csv").exists());

    let again = plan_cli(&[&["eval"], &base[..], &["--arm", "plan"]].concat());
    assert!(again.status.success());
    assert_eq!(stdout_lines(&again)[0]["skipped"], true);
}

#[test]
fn env_var_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_plan-cli"))
        .args(["synth-data", "--config", smoke_config().to_str().unwrap()])
        .env("PLAN_OUT_DIR", dir.path())
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn seed_flag_changes_the_stage_hash() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let run = |dir: &Path, seed: &str| {
        let out = plan_cli(&["synth-data", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", seed]);
        stdout_lines(&out)[0]["config_hash"].clone()
    };
    assert_ne!(run(a.path(), "1"), run(b.path(), "2"));
}
