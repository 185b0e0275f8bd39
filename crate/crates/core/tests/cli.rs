use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cci_tdoa::bench::{EpsilonMode, ExperimentConfig, SignalSpec};
use cci_tdoa::solvers::{Epsilon, Method};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cci-tdoa"))
        .args(args)
        .env_remove("CCI_TDOA_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The single machine-parsable error line.
fn error_code(o: &Output) -> String {
    let err = stderr(o);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    lines[0][6..lines[0].find(']').unwrap()].to_string()
}

fn fixture() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/noiseless"))
}

#[test]
fn simulate_writes_the_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cli(&["simulate", "--signal", "white", "--n-mics", "2", "--s", "0.1", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["airs.csv", "observations.csv", "tdoa.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(stdout(&o).contains("TDOA"));
    let again = dir.path().join("again");
    cli(&["simulate", "--signal", "white", "--n-mics", "2", "--s", "0.1", "--seed", "7", "--out", again.to_str().unwrap()]);
    assert_eq!(fs::read(out.join("observations.csv")).unwrap(), fs::read(again.join("observations.csv")).unwrap());
}

#[test]
fn usage_and_domain_errors() {
    let o = cli(&["simulate", "--signal", "white", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "usage");

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cli(&["simulate", "--s", "-1", "--seed", "1", "--out", d]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "invalid-argument");

    let o = cli(&["solve", "--solver", "bogus", "--in", d]);
    assert_eq!(o.status.code(), Some(2));

    let o = cli(&["benchmark", "--out", d]);
    assert_eq!(o.status.code(), Some(2), "benchmark without a seed");

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "z_trials = 0\n").unwrap();
    let o = cli(&["benchmark", "--config", bad.to_str().unwrap(), "--seed", "1", "--out", d]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), "usage");

    let o = cli(&["solve", "--in", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "not-found");
}

#[test]
fn help_lists_flags_with_defaults() {
    for (sub, flags) in [
        ("simulate", &["--signal", "--n-mics", "--s", "--seed", "--out"][..]),
        ("solve", &["--solver", "--in", "--epsilon", "--channel-len", "--out"][..]),
        ("benchmark", &["--preset", "--config", "--seed", "--jobs", "--out"][..]),
        ("metrics", &["--truth", "--estimate", "--threshold"][..]),
        ("report", &["--in", "--out"][..]),
    ] {
        let o = cli(&[sub, "--help"]);
        assert!(o.status.success());
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{sub} help lacks {f}");
        }
    }
    assert!(stdout(&cli(&["solve", "--help"])).contains("[default: il1c]"));
}

#[test]
fn tong_on_noiseless_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["solve", "--solver", "tong", "--in", fixture().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("subspace error:")).unwrap();
    let err: f64 = line["subspace error:".len()..].trim().parse().unwrap();
    assert!(err < 1e-6, "{line}");
    assert!(dir.path().join("estimate.csv").is_file());
    assert!(dir.path().join("diagnostics.json").is_file());
    assert_eq!(fs::read_to_string(dir.path().join("estimate_tdoa.csv")).unwrap(), fs::read_to_string(fixture().join("tdoa.csv")).unwrap());
}

#[test]
fn il1c_auto_epsilon_runs_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["solve", "--solver", "il1c", "--epsilon", "auto", "--in", fixture().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert!(!diag["cv_scores"].as_array().unwrap().is_empty());
    assert!(stdout(&o).contains("slack_equality"));

    let o = cli(&["metrics", "--truth", fixture().join("airs.csv").to_str().unwrap(), "--estimate", dir.path().join("estimate.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("A_PUP"));
}

#[test]
fn ensemble_needs_three_microphones() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cli(&["simulate", "--n-mics", "2", "--seed", "4", "--signal-len", "1024", "--out", d]);
    assert!(o.status.success());
    let o = cli(&["solve", "--solver", "il1c-ensemble", "--epsilon", "1x", "--in", d]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_code(&o), "invalid-argument");
}

#[test]
fn benchmark_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        signals: vec![SignalSpec::White],
        s_values: vec![0.1],
        n_mics_values: vec![2, 3],
        z_trials: 2,
        methods: vec![Method::Il1c],
        epsilon: EpsilonMode::Fixed(Epsilon::InitMass(1.0)),
        signal_len: 1024,
        reference_s: 0.1,
        ..ExperimentConfig::default()
    };
    let path = dir.path().join("exp.cfg");
    fs::write(&path, cfg.to_text()).unwrap();
    let out = dir.path().join("bench");
    let o = cli(&["benchmark", "--config", path.to_str().unwrap(), "--seed", "5", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("δ_avg"));
    for f in ["report.json", "cells.csv", "raw_trials.csv", "tables.md"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let re = dir.path().join("re");
    let o = cli(&["report", "--in", out.to_str().unwrap(), "--out", re.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("cells.csv")).unwrap(), fs::read(re.join("cells.csv")).unwrap());
}
