//! End-to-end checks of the `twinmig` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[world]
vehicles = 2
servers = 3
slots_per_episode = 4

[diffusion]
hidden = [8]

[trainer]
critic_hidden = [8]
epochs = 5
transitions_per_epoch = 8
batch_size = 4
eval_interval = 1
eval_episodes = 1
checkpoint_interval = 0
"#;

fn twinmig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinmig")).args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

/// Data rows of a versioned CSV: schema line and header excluded.
fn data_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema=twinmig."));
    lines.next().expect("header line");
    lines.map(String::from).collect()
}

#[test]
fn train_writes_one_metrics_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = twinmig(&["train", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&out.join("seed_3/metrics.csv")).len(), 5);
    assert!(out.join("seed_3/final.bin").exists());
    assert!(out.join("seed_3/attacks.csv").exists());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("started_at") && !manifest.contains("finished_at"));
    let completion = fs::read_to_string(out.join("completion.toml")).unwrap();
    assert!(completion.contains("finished_at") && completion.contains("ok"));
}

#[test]
fn eval_reads_a_training_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = twinmig(&["train", "--config", &cfg, "--seed", "0,1", "--variant", "no_pre", "--out", run_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("eval");
    let o = twinmig(&[
        "eval", "--config", &cfg, "--seed", "0,1", "--variant", "no_pre", "--checkpoint", run_s, "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&out.join("eval.csv")).len(), 2);
    // Traces cover the first seed's episode: four slots, two vehicles, three servers.
    assert_eq!(data_rows(&out.join("slots.csv")).len(), 4 * 2);
    assert_eq!(data_rows(&out.join("reputation.csv")).len(), 4 * 3);
}

#[test]
fn missing_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinmig(&["train", "--config", "/nonexistent/cfg.toml", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn unknown_variant_is_rejected() {
    let o = twinmig(&["train", "--variant", "greedy"]);
    assert!(!o.status.success());
}

#[test]
fn sweep_with_no_values_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = twinmig(&[
        "sweep", "--config", &cfg, "--param", "rho", "--values", "", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_rows(&dir.path().join("sweep.csv")).is_empty());
}

#[test]
fn rho_sweep_has_a_row_per_value_seed_and_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = twinmig(&[
        "sweep", "--config", &cfg, "--param", "rho", "--seed", "0,1", "--variant", "random,full_pre", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 6 * 2 * 2);
    for rho in ["0.25", "0.5", "1", "2", "4", "8"] {
        assert_eq!(rows.iter().filter(|r| r.split(',').nth(1) == Some(rho)).count(), 4, "rho {rho}");
    }
}

#[test]
fn attack_type_sweep_accepts_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = twinmig(&[
        "sweep", "--config", &cfg, "--param", "attack_type", "--variant", "random", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&dir.path().join("sweep.csv")).len(), 4);
}

#[test]
fn oracle_check_passes() {
    let o = twinmig(&["oracle-check"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn oracle_check_catches_a_mutated_trust_constant() {
    let o = twinmig(&["oracle-check", "--mutate-trust"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!o.status.success());
    assert!(stdout.lines().any(|l| l.starts_with("FAIL trust")), "{stdout}");
}
