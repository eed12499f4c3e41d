mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use common::fixture_path;

fn mbprei(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbprei"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MBPREI_WORKERS")
        .output()
        .unwrap()
}

fn report(out: &Path, command: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join(format!("{command}.json"))).unwrap()).unwrap()
}

fn path(name: &str) -> String {
    fixture_path(name).to_str().unwrap().to_owned()
}

#[test]
fn validate_well_formed_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbprei(&["validate", &path("rank_one"), "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = report(dir.path(), "validate");
    assert_eq!(r["command"], "validate");
    assert_eq!(r["result"]["violations"], Value::Array(vec![]));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("validate: scenario is valid"));
}

#[test]
fn validation_failures_exit_one_and_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, fs::read_to_string(fixture_path("rank_one")).unwrap().replace("[0.5, 0.5]", "[0.5, 0.6]")).unwrap();
    let out = mbprei(&["validate", bad.to_str().unwrap(), "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let r = report(dir.path(), "validate");
    assert_eq!(r["result"]["violations"][0]["location"], "state_probs");

    let out = mbprei(&["estimate-gamma", bad.to_str().unwrap(), "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("state_probs sums to 1.1"));
}

#[test]
fn malformed_scenario_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"d\": 2,\n  \"states\": [ { \"offspring\": 7 } ]\n}\n").unwrap();
    let out = mbprei(&["validate", bad.to_str().unwrap(), "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn usage_errors_and_help() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mbprei(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(mbprei(&["validate"], dir.path()).status.code(), Some(1));
    let help = mbprei(&["--help"], dir.path());
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in [
        "validate",
        "simulate",
        "directions",
        "estimate-gamma",
        "estimate-kappa",
        "check-conditions",
        "check-mean",
        "sweep-lp",
        "probe-limit",
    ] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    let zero = mbprei(&["validate", &path("rank_one"), "--workers", "0"], dir.path());
    assert_eq!(zero.status.code(), Some(1));
}

#[test]
fn missing_seed_warns_and_uses_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbprei(&["--scenario", &path("rank_one"), "validate"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no --seed given"));
    assert_eq!(report(dir.path(), "validate")["config"]["seed"], 1);
}

#[test]
fn estimate_kappa_on_rank_one_spec() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["estimate-kappa", &path("rank_one"), "--s", "-1", "--n", "12", "--reps", "100000", "--seed", "4"];
    let out = mbprei(&args, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = &report(dir.path(), "estimate-kappa")["result"];
    let (k, lo, hi) = (r["kappa_hat"].as_f64().unwrap(), r["ci_low"].as_f64().unwrap(), r["ci_high"].as_f64().unwrap());
    assert!(lo <= 0.375 && 0.375 <= hi, "{k} [{lo}, {hi}]");
    assert!((k - 0.375).abs() < 0.005);
}

#[test]
fn check_mean_on_deterministic_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let args =
        ["check-mean", &path("deterministic"), "--mode", "quenched-xiY", "--n", "2", "--reps", "100", "--seed", "2"];
    let out = mbprei(&args, dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = &report(dir.path(), "check-mean")["result"];
    assert_eq!(r["formula"], 1.75);
    assert_eq!(r["mc_mean"], 1.75);
    assert_eq!(r["pass"], true);
}

#[test]
fn numerical_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("reducible.json");
    let text = fs::read_to_string(fixture_path("deterministic")).unwrap();
    let pos = text.rfind("\"vector\": [1, 1]").unwrap();
    fs::write(&spec, format!("{}\"vector\": [0, 0]{}", &text[..pos], &text[pos + 16..])).unwrap();
    let out = mbprei(&["directions", spec.to_str().unwrap(), "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not allowable"));
}

#[test]
fn csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let two_state = path("two_state");
    let out = mbprei(
        &["sweep-lp", &path("rank_one"), "--p", "2", "--n-list", "2,4", "--reps", "500", "--seed", "3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("sweep-lp.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("n,estimate,ci_low,ci_high"));
    assert_eq!(csv.lines().count(), 3);

    let out = mbprei(&["simulate", &two_state, "--n", "4", "--format", "csv", "--seed", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("generation,tag_kind,tag_k,tag_r,tag_l,count_1,count_2"));
    assert!(csv.lines().nth(1).unwrap().starts_with("0,initial,,,,"));

    let out = mbprei(&["simulate", &two_state, "--n", "4", "--seed", "3", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn workers_from_environment_do_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str, sub: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_mbprei"))
            .args(["probe-limit", &path("two_state"), "--n-list", "2,4", "--reps", "3000", "--seed", "11", "--out"])
            .arg(dir.path().join(sub))
            .env("MBPREI_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join(sub).join("probe-limit.json")).unwrap()
    };
    assert_eq!(run("1", "a"), run("6", "b"));
}
