use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn polylab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polylab"))
        .args(args)
        .env("POLYLAB_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn order_check_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["order-check", "--n", "4", "--m", "2", "--replicas", "2000", "--seed", "9", "--law", "bernoulli"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = polylab(&a, &args);
    let rb = polylab(&b, &args);
    assert_eq!(ra.status.code(), Some(0), "{}", String::from_utf8_lossy(&ra.stderr));
    assert_eq!(rb.status.code(), Some(0));
    let ca = std::fs::read(a.join("order-check/verdict.csv")).unwrap();
    let cb = std::fs::read(b.join("order-check/verdict.csv")).unwrap();
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
    let report = read_json(&a.join("order-check/report.json"));
    assert_eq!(report["config"]["params"]["seed"], 9);
    assert!(report["plots"].as_array().unwrap().iter().any(|p| p == "curves.svg"));
}

#[test]
fn beta_zero_smoke_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let r = polylab(dir.path(), &["polymer", "--beta", "0", "--n", "5", "--replicas", "100"]);
    assert_eq!(r.status.code(), Some(0));
    let rep = read_json(&dir.path().join("polymer/report.json"));
    assert!(rep["checks"].as_array().unwrap().iter().all(|c| c["status"] == "CONSISTENT"));
    let r = polylab(dir.path(), &["oracle", "--beta", "0", "--n", "2", "--m", "1"]);
    assert_eq!(r.status.code(), Some(0));
    let rep = read_json(&dir.path().join("oracle/report.json"));
    assert!(rep["checks"].as_array().unwrap().iter().all(|c| c["status"] == "CONSISTENT" && c["exact"] == true));
}

#[test]
fn reversed_oracle_claim_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let r = polylab(dir.path(), &["oracle", "--n", "4", "--m", "2", "--beta", "0.7", "--claim", "tree-le-polymer", "--corollary", "false"]);
    assert_eq!(r.status.code(), Some(2));
    let csv = std::fs::read_to_string(dir.path().join("oracle/certificate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gcov.json");
    std::fs::write(&cfg, r#"{"n": 4, "m": 2}"#).unwrap();
    let out = dir.path().join("o");
    let r = polylab(&out, &["gaussian-cov", "--config", cfg.to_str().unwrap(), "--m", "1"]);
    assert_eq!(r.status.code(), Some(0));
    let rep = read_json(&out.join("gaussian-cov/report.json"));
    assert_eq!(rep["config"]["params"]["n"], 4);
    assert_eq!(rep["config"]["params"]["m"], 1);
    assert_eq!(rep["results"]["slepian"]["counterexamples"], 0);
    let lattice = std::fs::read_to_string(out.join("gaussian-cov/covariance_lattice.csv")).unwrap();
    assert!(!lattice.is_empty());
}

#[test]
fn bad_config_reports_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"n\": 4,\n  \"bogus\": 1\n}").unwrap();
    let r = polylab(dir.path(), &["peacock", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
    let r = polylab(dir.path(), &["order-check", "--claim", "nope", "--replicas", "10", "--n", "2"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn suite_rows_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let r = polylab(dir.path(), &["suite", empty.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let summary = read_json(&dir.path().join("suite/summary.json"));
    assert_eq!(summary["rows"].as_array().unwrap().len(), 0);

    let manifest = dir.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"{"experiments": [
            {"name": "cov", "experiment": "gaussian-cov", "params": {"n": 4}},
            {"experiment": "oracle", "params": {"n": 2, "m": 1, "claim": "tree-le-polymer"}},
            {"experiment": "polymer", "params": {"n": 3, "replicas": 50, "beta": 0.5}}
        ]}"#,
    )
    .unwrap();
    let out = dir.path().join("p");
    let r = polylab(&out, &["suite", manifest.to_str().unwrap(), "--parallel", "2"]);
    assert_eq!(r.status.code(), Some(2));
    let summary = read_json(&out.join("suite/summary.json"));
    let rows = summary["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["status"], "OK");
    assert_eq!(rows[1]["status"], "VIOLATED");
}

#[test]
fn suite_fail_fast_skips_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(
        &manifest,
        r#"[
            {"experiment": "polymer", "params": {"n": 0}},
            {"experiment": "gaussian-cov", "params": {"n": 3}}
        ]"#,
    )
    .unwrap();
    let r = polylab(dir.path(), &["suite", manifest.to_str().unwrap(), "--fail-fast"]);
    assert_eq!(r.status.code(), Some(1));
    let rows = read_json(&dir.path().join("suite/summary.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows[0]["status"], "ERROR");
    assert_eq!(rows[1]["status"], "SKIPPED");
    let r = polylab(dir.path(), &["suite", manifest.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let rows = read_json(&dir.path().join("suite/summary.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows[1]["status"], "OK");
}
