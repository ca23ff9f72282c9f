use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rdmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdmix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn simulated(dir: &Path, days: &str) -> PathBuf {
    let out = dir.join("sim");
    let o = rdmix(&["simulate", "--days", days, "--seed", "11", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("visits.csv")
}

fn error_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).expect("stderr is one JSON object")
}

fn drop_column(src: &Path, dst: &Path, column: &str) {
    let mut r = csv::Reader::from_path(src).unwrap();
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != column).collect();
    let mut w = csv::Writer::from_path(dst).unwrap();
    w.write_record(keep.iter().map(|&i| &headers[i])).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        w.write_record(keep.iter().map(|&i| &rec[i])).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn missing_outcome_column_is_a_data_error_naming_it() {
    let tmp = TempDir::new().unwrap();
    let visits = simulated(tmp.path(), "20");
    let cut = tmp.path().join("cut.csv");
    drop_column(&visits, &cut, "time_to_dispo");
    let o = rdmix(&[
        "estimate",
        "--input",
        cut.to_str().unwrap(),
        "--outcome",
        "time_to_dispo",
        "--out",
        tmp.path().join("est").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_json(&o);
    assert_eq!(e["error"], "data");
    assert!(e["message"].as_str().unwrap().contains("time_to_dispo"));
}

#[test]
fn bad_flags_are_usage_errors() {
    let o = rdmix(&["estimate", "--bandwidth", "wide"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = rdmix(&["simulate", "--preset", "nonesuch", "--out", "/tmp/rdmix-never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_json(&o)["message"].as_str().unwrap().contains("nonesuch"));

    let o = rdmix(&["estimate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unestimable_model_exits_with_estimation_status() {
    let tmp = TempDir::new().unwrap();
    let visits = simulated(tmp.path(), "20");
    let o = rdmix(&[
        "mediate",
        "--input",
        visits.to_str().unwrap(),
        "--bandwidth",
        "0.0001",
        "--out",
        tmp.path().join("med").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_json(&o)["error"], "estimation");
}

#[test]
fn sidecars_record_config_hash_seed_and_inputs() {
    let tmp = TempDir::new().unwrap();
    let visits = simulated(tmp.path(), "20");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(visits.with_extension("csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 11);
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);

    let out = tmp.path().join("est");
    let o = rdmix(&["estimate", "--input", visits.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("estimate.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn recorded_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let visits = simulated(tmp.path(), "30");
    let first = tmp.path().join("a");
    let o = rdmix(&[
        "endhour",
        "--input",
        visits.to_str().unwrap(),
        "--bandwidth",
        "1.5",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let second = tmp.path().join("b");
    let o = rdmix(&[
        "endhour",
        "--config",
        first.join("config.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["endhour.csv", "endhour.csv.meta.json", "config.json"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}
