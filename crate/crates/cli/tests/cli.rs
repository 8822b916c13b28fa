use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qsq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsq")).args(args).env_remove("QSQ_OUT_DIR").output().unwrap()
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).to_string_lossy().into_owned()
}

#[test]
fn learn_parity_end_to_end() {
    let out = qsq(&["learn-parity", "--n", "10", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["result"]["queries_used"], 10);
    assert_eq!(r["result"]["recovered_parity"], r["result"]["target"]);
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn sqdim_on_bundled_class() {
    let out = qsq(&["sqdim", "--class", &data("parity5.json")]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report(&out)["result"]["d"], 32);
}

#[test]
fn reports_are_deterministic() {
    for args in [
        &["sim-qstat", "--n", "6", "--trials", "50", "--seed", "3"][..],
        &["protocol", "--n", "6", "--trials", "40", "--seed", "3"][..],
        &["private-learn", "--n", "5", "--seed", "11"][..],
        &["learn-dnf", "--n", "8", "--s", "2", "--seed", "4"][..],
    ] {
        let a = qsq(args);
        let b = qsq(args);
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    let out = dir.path().join("report.json");
    let trace = dir.path().join("trace.csv");
    fs::write(
        &config,
        serde_json::json!({"n": 6, "seed": 1, "model": "exact", "out": out, "trace": trace}).to_string(),
    )
    .unwrap();
    let status = qsq(&["learn-parity", "--config", config.to_str().unwrap(), "--n", "7"]);
    assert_eq!(status.status.code(), Some(0));
    assert!(status.stdout.is_empty());
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["config"]["n"], 7);
    assert_eq!(r["config"]["model"], "exact");
    assert_eq!(r["result"]["queries_used"], 7);
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("query_index,kind,tau,alpha,exact,abs_error"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_qsq"))
        .args(["spectrum", "--n", "4", "--seed", "2"])
        .env("QSQ_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let r: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("spectrum.json")).unwrap()).unwrap();
    assert_eq!(r["result"]["coefficients"].as_array().unwrap().len(), 16);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.json");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n": 5, "unknown_key": true, "#).unwrap();
    let r = qsq(&["learn-parity", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    let err: Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"], "usage");

    assert_eq!(qsq(&["learn-parity", "--n", "5"]).status.code(), Some(2));
    assert_eq!(qsq(&["learn-parity", "--bogus"]).status.code(), Some(2));
    assert_eq!(qsq(&["learn-parity", "--n", "40", "--seed", "1"]).status.code(), Some(2));

    let leak = qsq(&["dp-audit", "--mechanism", "exact", "--samples", "2000", "--seed", "1"]);
    assert_eq!(leak.status.code(), Some(1));
    assert_eq!(report(&leak)["predicate"]["holds"], false);

    let concept = dir.path().join("parity.json");
    fs::write(&concept, r#"{"kind":"parity","n":12,"s":7}"#).unwrap();
    let r = qsq(&["learn-junta", "--concept", concept.to_str().unwrap(), "--k", "1", "--model", "exact"]);
    assert_eq!(r.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"], "contract_violation");
}

#[test]
fn every_subcommand_runs() {
    for args in [
        &["learn-junta", "--n", "8", "--k", "2", "--seed", "1"][..],
        &["gl", "--n", "8", "--tau", "0.3", "--seed", "1"][..],
        &["sim-noisy", "--n", "6", "--tau", "0.3", "--eta", "0.01", "--trials", "20", "--seed", "1"][..],
        &["adversary-game", "--n", "6", "--queries", "2"][..],
        &["dp-audit", "--samples", "50000", "--seed", "2"][..],
    ] {
        let out = qsq(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let game = report(&qsq(&["adversary-game", "--n", "6", "--queries", "2"]));
    assert!(game["result"]["surviving_count"].as_u64().unwrap() >= 2);
}
