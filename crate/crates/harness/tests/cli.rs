use std::path::Path;
use std::process::Command;

use coxq_harness::{run, ExperimentConfig, Kind, Report, EXIT_CONFIG_ERROR, EXIT_CRITERION_FAILED, EXIT_PASS};

fn coxq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_coxq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const DETERMINISTIC: &str =
    r#"{"env": {"family": "deterministic", "lambda": 1.0}, "queues": [1.0], "delta": 1.0, "alpha": 2.0}"#;

#[test]
fn analytic_deterministic_example() {
    let config = ExperimentConfig::from_json(DETERMINISTIC).unwrap();
    let out = run(Kind::Analytic, &config).unwrap();
    let q = &out.report.results["queues"][0];
    assert_eq!(q["stationary_mean"], 1.0);
    assert_eq!(q["stationary_variance"], 1.0);
    assert_eq!(q["clt_sigma2"], 1.0);
    assert!(out.report.passed);
}

#[test]
fn report_round_trips() {
    let config = ExperimentConfig::from_json(DETERMINISTIC).unwrap();
    let out = run(Kind::Analytic, &config).unwrap();
    let bytes = &out.artifact("report.json").unwrap().bytes;
    let back: Report = serde_json::from_slice(bytes).unwrap();
    assert_eq!(back, out.report);
    assert_eq!(back.schema_version, coxq_harness::SCHEMA_VERSION);
}

#[test]
fn simulate_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.json",
        r#"{"env": {"family": "gamma", "shape": 2.0, "scale": 0.5}, "queues": [1.0, 2.0], "delta": 1.0,
            "alpha": 1.0, "N_grid": [10], "grid": [0.5, 1.0], "replications": 300}"#,
    );
    let dirs: Vec<String> = (0..2)
        .map(|i| tmp.path().join(format!("out{i}")).to_string_lossy().into_owned())
        .collect();
    for d in &dirs {
        let o = coxq(&["simulate", "--config", &cfg, "--seed", "5", "--out", d]);
        assert!(o.status.code() == Some(EXIT_PASS) || o.status.code() == Some(EXIT_CRITERION_FAILED));
    }
    for f in ["report.json", "trajectories.csv", "moments.json"] {
        let a = std::fs::read(Path::new(&dirs[0]).join(f)).unwrap();
        let b = std::fs::read(Path::new(&dirs[1]).join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let csv = std::fs::read_to_string(Path::new(&dirs[0]).join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("replication,time,queue,count\n"));
    assert_eq!(csv.lines().count(), 1 + 300 * 2 * 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o").to_string_lossy().into_owned();
    let missing = coxq(&["analytic", "--config", "/nonexistent.json", "--out", &out]);
    assert_eq!(missing.status.code(), Some(EXIT_CONFIG_ERROR));
    // level below the fluid value
    let low = write_config(
        tmp.path(),
        "low.json",
        r#"{"env": {"family": "deterministic", "lambda": 1.0}, "queues": [1.0], "delta": 1.0, "alpha": 2.0,
            "t": 40.0, "a": 0.5, "N_grid": [50, 100]}"#,
    );
    let o = coxq(&["ldp-check", "--config", &low, "--out", &out]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG_ERROR));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rho(t)"));
    let wrong_kind = write_config(
        tmp.path(),
        "kind.json",
        &DETERMINISTIC.replacen('{', r#"{"kind": "simulate", "#, 1),
    );
    assert_eq!(
        coxq(&["analytic", "--config", &wrong_kind, "--out", &out])
            .status
            .code(),
        Some(EXIT_CONFIG_ERROR)
    );
    let ok = write_config(tmp.path(), "ok.json", DETERMINISTIC);
    assert_eq!(
        coxq(&["analytic", "--config", &ok, "--out", &out]).status.code(),
        Some(EXIT_PASS)
    );
    assert_eq!(coxq(&["bogus", "--config", &ok]).status.code(), Some(EXIT_CONFIG_ERROR));
    // a tolerance nobody can meet
    let strict = write_config(
        tmp.path(),
        "strict.json",
        r#"{"env": {"family": "exponential", "rate": 1.0}, "queues": [1.0], "delta": 1.0, "alpha": 0.5,
            "N_grid": [10, 100], "tolerances": {"trichotomy_rel": 1e-12}}"#,
    );
    assert_eq!(
        coxq(&["analytic", "--config", &strict, "--out", &out]).status.code(),
        Some(EXIT_CRITERION_FAILED)
    );
}

#[test]
fn subcommands_check_their_preconditions() {
    let single = ExperimentConfig::from_json(DETERMINISTIC).unwrap();
    for kind in [Kind::FcltCheck, Kind::CorrCheck, Kind::LdpCheck, Kind::Simulate] {
        assert!(run(kind, &single).is_err(), "{kind}");
    }
    let two = ExperimentConfig::from_json(&DETERMINISTIC.replace("[1.0]", "[1.0, 2.0]")).unwrap();
    assert!(run(Kind::CltCheck, &two).is_err());
}

#[test]
fn fclt_check_small_instance() {
    let config = ExperimentConfig::from_json(
        r#"{"env": {"family": "exponential", "rate": 1.0}, "queues": [1.0, 2.0], "delta": 1.0, "alpha": 2.0,
            "N_grid": [200], "grid": [0.0, 1.0], "replications": 4000, "seed": 3,
            "tolerances": {"covariance_rel": 0.15}}"#,
    )
    .unwrap();
    let out = run(Kind::FcltCheck, &config).unwrap();
    assert!(out.report.passed, "{:?}", out.report.criteria);
}

#[test]
fn ldp_check_multivariate_writes_rates() {
    let config = ExperimentConfig::from_json(
        r#"{"env": {"family": "exponential", "rate": 1.0}, "queues": [1.0, 2.0], "delta": 1.0, "alpha": 0.5,
            "t": 5.0, "a": [1.5, 0.8]}"#,
    )
    .unwrap();
    let out = run(Kind::LdpCheck, &config).unwrap();
    let rates: serde_json::Value = serde_json::from_slice(&out.artifact("rates.json").unwrap().bytes).unwrap();
    assert!(rates["result"]["rate"].as_f64().unwrap() < 0.0);
    assert_eq!(rates["result"]["theta_star"].as_array().unwrap().len(), 2);
}
