//! End-to-end checks of the `levcool` binary: artifacts on disk and the
//! documented exit codes.

use std::path::Path;
use std::process::Command;

fn levcool(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_levcool"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn levcool")
}

#[test]
fn model_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = levcool(dir.path(), &["model"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let curve = std::fs::read_to_string(dir.path().join("cooling_curve.csv")).unwrap();
    assert!(curve.starts_with("gamma_fb_hz,"));
    assert_eq!(curve.lines().count(), 401);

    let summary = std::fs::read_to_string(dir.path().join("model_summary.txt")).unwrap();
    for key in ["eta_meas", "gamma_star_hz", "n_min_ideal", "conditional_bound"] {
        assert!(summary.contains(key), "missing {key} in summary");
    }
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ this is not json").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_levcool"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("model")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_anchor_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = levcool::harness::ExperimentConfig::nominal();
    cfg.sweep.anchor_index = 0;
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_levcool"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .arg("model")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_without_traces_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = levcool(dir.path(), &["estimate"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn squash_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = levcool(dir.path(), &["squash"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(dir.path().join("squashing.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 6);
    // the in-loop dip deepens monotonically with gain
    let dips: Vec<f64> = rows[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(dips.windows(2).all(|w| w[1] < w[0]), "dips {dips:?}");
    assert!(dips.last().unwrap() < &1.0);
}
