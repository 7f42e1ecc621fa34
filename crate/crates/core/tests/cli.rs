use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use privlms::harness::{self, to_db};

fn privlms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privlms")).args(args).output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn preset_dump_roundtrips() {
    let out = privlms(&["preset-dump", "--scenario", "desk", "--seed", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = harness::ScenarioConfig::from_json(&text).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.agents, 6);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.json");
    std::fs::write(&file, &text).unwrap();
    let again = privlms(&["preset-dump", "--scenario", file.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = privlms(&["simulate", "--scenario", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
}

#[test]
fn theory_csv_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = privlms(&[
        "theory", "--scenario", "desk", "--iters", "40", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = harness::preset("desk", Some(&json!({"iterations": 40, "simulate": false}))).unwrap();
    let bundle = harness::run_experiment(&cfg, false).unwrap();
    for fam in &bundle.families {
        let path = dir.path().join(format!("curves_{}.csv", fam.spec.label));
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
        assert_eq!(header, harness::CSV_HEADER);
        let col = header.iter().position(|h| h == "msd_th_db").unwrap();
        let emp = header.iter().position(|h| h == "msd_emp_db").unwrap();
        let records: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(records.len(), 40);
        for (rec, row) in records.iter().zip(&fam.rows) {
            let v: f64 = rec[col].parse().unwrap();
            assert!((v - to_db(row.msd_th.unwrap())).abs() <= 1e-12);
            assert!(rec[emp].is_empty());
        }
    }
}

#[test]
fn emission_is_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = privlms(&[
            "simulate", "--scenario", "desk", "--runs", "40", "--iters", "30", "--out", d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn dense_summary_brackets_step_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = privlms(&[
        "theory", "--scenario", "dense", "--iters", "30", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let doc = read_json(&dir.path().join("summary.json"));
    let mu = doc["config"]["step_size"].as_f64().unwrap();
    for fam in doc["families"].as_array().unwrap() {
        let st = &fam["stability"];
        assert_eq!(st["mu_inside"], Value::Bool(true), "{}", fam["label"]);
        for a in st["agents"].as_array().unwrap() {
            assert!(a["mu_lo"].as_f64().unwrap() < mu && mu < a["mu_hi"].as_f64().unwrap());
        }
    }
}

#[test]
fn validate_reports_checks() {
    let out = privlms(&["validate", "--scenario", "line"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.is_object());
}
