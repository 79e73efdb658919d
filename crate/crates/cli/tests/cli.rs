use std::path::Path;
use std::process::{Command, Output, Stdio};

use hydrodispatch::dispatch::CASE_HEADER;

const BIN: &str = env!("CARGO_BIN_EXE_hydrodispatch");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth_into(dir: &Path, hours: usize) {
    let mut synth = Command::new(BIN)
        .current_dir(dir)
        .args(["synth", "--hours", &hours.to_string()])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let ingest = Command::new(BIN)
        .current_dir(dir)
        .arg("ingest")
        .stdin(synth.stdout.take().unwrap())
        .output()
        .unwrap();
    assert!(synth.wait().unwrap().success());
    assert!(ingest.status.success(), "{}", String::from_utf8_lossy(&ingest.stderr));
}

#[test]
fn synth_ingest_and_lag_find_the_planted_delay() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 2000);
    let lag = ok(dir.path(), &["lag", "--up", "UP", "--down", "DOWN", "--json", "links.json"]);
    let best: Vec<&str> = lag.lines().filter(|l| l.starts_with("best_lag\t")).collect();
    assert!(!best.is_empty(), "{lag}");
    assert!(best.iter().all(|l| l.ends_with("\t2")), "{best:?}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("links.json")).unwrap()).unwrap();
    assert!(!report["links"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--plant"));
    assert_eq!(run(dir.path(), &["lag", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["dispatch", "--scenario", "dry:summer"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_print_a_code_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path(), 500);
    let cases: [(&[&str], &str); 4] = [
        (&["efficiency", "--plant", "NOPE"], "error: not_found:"),
        (&["dispatch", "--plant", "UP", "--scenario", "dry:summer"], "error: untrained:"),
        (&["dispatch", "--plant", "UP", "--scenario", "soggy:june"], "error: validation:"),
        (&["export", "--manifest", "missing.json"], "error: io:"),
    ];
    for (args, prefix) in cases {
        let out = run(dir.path(), args);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
    }
}

#[test]
fn dispatch_export_round_trips_through_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_into(d, 8784 + 2 * 8760);
    for plant in ["UP", "DOWN"] {
        ok(d, &["efficiency", "--plant", plant, "--out", "curves.csv"]);
        ok(d, &["train", "--plant", plant, "--epochs", "3"]);
    }
    ok(d, &["lag", "--up", "UP", "--down", "DOWN", "--json", "links.json"]);
    let stdout = ok(d, &["dispatch", "--all", "--scenario", "wet:spring", "--links", "links.json", "--manifest", "run.json"]);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some(CASE_HEADER.join(",").as_str()));
    assert_eq!(lines.count(), 17);
    let exported = ok(d, &["export", "--manifest", "run.json"]);
    assert_eq!(exported, stdout);
    ok(d, &["export", "--manifest", "run.json", "--out", "case.csv"]);
    assert_eq!(std::fs::read_to_string(d.join("case.csv")).unwrap(), stdout);
}
