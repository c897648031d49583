//! End-to-end checks of the command-line interface: config validation,
//! artifact layout, the exit-status taxonomy, and seed overrides.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_goodwill")
}

fn base_config() -> String {
    r#"{
  "model": {
    "a0": 1.0, "ad": 0.5, "b0": 2.0,
    "sigma1": 0.2, "sigma2": 0.3,
    "delay_d": 0.5, "horizon_t": 1.0,
    "history": { "constant": 1.0 }
  },
  "control": {
    "levels": [0.0, 1.0],
    "initial": { "constant": 1.0 },
    "spike": { "t_start": 0.2, "epsilon": 0.06, "value": 0.0 }
  },
  "cost": {
    "advertising": { "quadratic": { "alpha": 0.5, "beta": 0.1 } },
    "running": { "quadratic": { "a": 0.25, "b": 0.0, "c": 0.0 } },
    "terminal": { "linear": { "rho": 1.0 } },
    "operating_interval": [0.0, 4.0],
    "linear_growth_bound": 10.0
  },
  "numerics": { "dt": 0.02, "n_paths": 3000, "seed": 11, "dump_paths": 2 }
}"#
    .to_string()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(bin()).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

#[test]
fn simulate_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config());
    let out = dir.path().join("run");
    let (code, stdout, _) = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stdout: {stdout}");
    for file in ["config.json", "paths.csv", "summary.json", "log.txt"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let paths = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(paths.starts_with("path_id,t,x,y,z\n"));
    // LF endings, no CR anywhere
    assert!(!paths.contains('\r'));
}

#[test]
fn deterministic_simulate_dumps_the_exponential_decay() {
    // Pure decay: a0 = 1, everything else off, x0 = 2. The final x column
    // of the path dump must be 2 e^{-1} within the Euler error.
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
  "model": {
    "a0": 1.0, "ad": 0.0, "b0": 0.0,
    "sigma1": 0.0, "sigma2": 0.0,
    "delay_d": 0.5, "horizon_t": 1.0,
    "history": { "constant": 2.0 }
  },
  "control": { "levels": [0.0] },
  "cost": {
    "advertising": { "quadratic": { "alpha": 0.0, "beta": 0.0 } },
    "running": { "linear": { "a": 0.0, "b": 0.0 } },
    "terminal": { "linear": { "rho": 1.0 } },
    "operating_interval": [0.0, 4.0],
    "linear_growth_bound": 10.0
  },
  "numerics": { "dt": 0.005, "n_paths": 3, "seed": 1, "dump_paths": 1 }
}"#;
    let config = write_config(dir.path(), text);
    let out = dir.path().join("run");
    let (code, _, stderr) = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let csv = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let x: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    let expected = 2.0 * (-1.0f64).exp();
    assert!(
        (x - expected).abs() < 5.0 * 0.005,
        "final x {x} vs 2/e = {expected}"
    );
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{ not json");
    let (code, _, stderr) = run(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 2, "stderr: {stderr}");
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = base_config().replace("\"a0\": 1.0,", "\"a0\": 1.0, \"sigma3\": 1.0,");
    let config = write_config(dir.path(), &text);
    let (code, _, stderr) = run(&["simulate", "--config", config.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("sigma3"), "stderr: {stderr}");
}

#[test]
fn negative_delay_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = base_config().replace("\"delay_d\": 0.5", "\"delay_d\": -1.0");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    let (code, _, stderr) = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(stderr.contains("model.delay_d"), "stderr: {stderr}");
}

#[test]
fn exit_code_matches_summary_test_outcomes() {
    // check-mp on the non-optimal constant control: violations are
    // expected, so the statistical test fails and the exit code is 4.
    let dir = tempfile::tempdir().unwrap();
    let text = base_config().replace(
        "\"initial\": { \"constant\": 1.0 }",
        "\"initial\": { \"constant\": 0.0 }",
    );
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    let (code, stdout, _) = run(&[
        "check-mp",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let all_passed = summary["tests"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["passed"].as_bool().unwrap());
    assert_eq!(code, if all_passed { 0 } else { 4 }, "stdout: {stdout}");
    assert!(!all_passed, "expected violations on the zero control");
    assert!(summary["details"]["violation_count"].as_u64().unwrap() > 0);
    assert!(summary["digest"].is_string());
    // report CSV has the pinned column layout
    let report = std::fs::read_to_string(out.join("mp_report.csv")).unwrap();
    assert!(report.starts_with("t,v,gap_mean,gap_stderr\n"));
}

#[test]
fn oracle_and_optimize_agree_on_the_tiny_instance() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
  "model": {
    "a0": 1.0, "ad": 0.5, "b0": 2.0,
    "sigma1": 0.15, "sigma2": 0.2,
    "delay_d": 0.25, "horizon_t": 1.0,
    "history": { "constant": 1.0 }
  },
  "control": { "levels": [0.0, 1.0], "initial": { "constant": 0.0 } },
  "cost": {
    "advertising": { "quadratic": { "alpha": 0.0, "beta": 0.3 } },
    "running": { "linear": { "a": 0.0, "b": 0.0 } },
    "terminal": { "linear": { "rho": 1.0 } },
    "operating_interval": [0.0, 4.0],
    "linear_growth_bound": 10.0
  },
  "numerics": { "dt": 0.25, "n_paths": 30000, "seed": 3 },
  "command": { "oracle_steps": 4, "budget": 24, "init_spike_steps": 1 }
}"#;
    let config = write_config(dir.path(), text);

    let out_oracle = dir.path().join("oracle");
    let (code, stdout, stderr) = run(&[
        "oracle",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_oracle.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stdout: {stdout} stderr: {stderr}");
    let oracle_csv = std::fs::read_to_string(out_oracle.join("oracle.csv")).unwrap();
    assert!(oracle_csv.starts_with("step,t,best_u\n"));
    assert_eq!(oracle_csv.lines().count(), 5);

    let out_opt = dir.path().join("optimize");
    let (code, stdout, stderr) = run(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_opt.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stdout: {stdout} stderr: {stderr}");
    let trace = std::fs::read_to_string(out_opt.join("descent_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,cost_mean,cost_stderr,spike_t,spike_v,epsilon\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_opt.join("summary.json")).unwrap())
            .unwrap();
    let names: Vec<&str> = summary["tests"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"descent_vs_oracle"), "tests: {names:?}");
}

#[test]
fn converge_writes_four_slope_rows_and_consistent_exit() {
    let dir = tempfile::tempdir().unwrap();
    // smaller ensembles keep this quick; spike fields give the window
    let text = base_config().replace("\"n_paths\": 3000", "\"n_paths\": 8000");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    let (code, stdout, _) = run(&[
        "converge",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let slopes = std::fs::read_to_string(out.join("slopes.csv")).unwrap();
    assert!(slopes.starts_with("quantity,slope,slope_stderr,intercept,below_floor\n"));
    assert_eq!(slopes.lines().count(), 5, "4 quantities + header");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let all_passed = summary["tests"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["passed"].as_bool().unwrap());
    assert_eq!(code, if all_passed { 0 } else { 4 }, "stdout: {stdout}");
}

#[test]
fn seed_override_lands_in_its_own_digest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &base_config());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
        "--seed-override",
        "99",
    ]);
    let digest = |p: &Path| -> String {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p.join("summary.json")).unwrap())
                .unwrap();
        v["digest"].as_str().unwrap().to_string()
    };
    assert_ne!(digest(&out_a), digest(&out_b));
}
