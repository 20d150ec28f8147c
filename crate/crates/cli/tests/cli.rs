use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use wideband_anm::model::{synthesize, DataMatrix, Scenario};

fn dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn wanm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wanm")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCENARIO: &str = r#"{
  "array": {"n_sensors": 6, "spacing_m": 1.7, "speed_mps": 340.0, "f0_hz": 100.0},
  "freqs": {"multipliers": [1, 2]},
  "sources": [
    {"theta_deg": 70.0, "amplitude": [{"re": 0.6, "im": 0.0}, {"re": 0.0, "im": 0.8}], "gain": 1.0},
    {"theta_deg": 115.0, "amplitude": [{"re": 0.5, "im": 0.5}, {"re": -0.5, "im": 0.5}], "gain": 2.0}
  ],
  "snr_db": 10.0,
  "seed": 5
}"#;

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn malformed_json_reports_position() {
    let d = dir("malformed");
    let scenario = d.join("bad.json");
    std::fs::write(&scenario, "{\n  \"array\": {\"n_sensors\": 6,,\n}").unwrap();
    let out = wanm(&["simulate", "--scenario", p(&scenario), "--out", p(&d.join("y.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn json_errors_flag() {
    let d = dir("json_errors");
    let out = wanm(&[
        "--json-errors",
        "estimate",
        "--data",
        p(&d.join("missing.csv")),
        "--config",
        p(&d.join("missing.json")),
        "--out",
        p(&d.join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("No such file"));
}

#[test]
fn simulate_is_reproducible() {
    let d = dir("reproducible");
    let scenario = d.join("s.json");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let (a, b, c) = (d.join("a.csv"), d.join("b.csv"), d.join("c.csv"));
    for (path, seed) in [(&a, "9"), (&b, "9"), (&c, "10")] {
        assert!(wanm(&["simulate", "--scenario", p(&scenario), "--out", p(path), "--seed", seed]).status.success());
    }
    let read = |x: &PathBuf| std::fs::read(x).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(d.join("a.scenario.json")).unwrap(), std::fs::read(d.join("b.scenario.json")).unwrap());
}

#[test]
fn noise_free_simulation_is_the_clean_signal() {
    let d = dir("noise_free");
    let scenario = d.join("s.json");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let out = d.join("y.csv");
    assert!(wanm(&["simulate", "--scenario", p(&scenario), "--out", p(&out), "--noise-free"]).status.success());
    let y = DataMatrix::load(&out).unwrap();
    let clean = synthesize(&Scenario::from_json(SCENARIO).unwrap()).clean;
    for j in 0..2 {
        for i in 0..6 {
            assert!((y.y[(i, j)] - clean.y[(i, j)]).norm() < 1e-14);
        }
    }
}

#[test]
fn estimate_recovers_noise_free_sources() {
    let d = dir("estimate");
    let scenario = d.join("s.json");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let data = d.join("y.csv");
    assert!(wanm(&["simulate", "--scenario", p(&scenario), "--out", p(&data), "--noise-free"]).status.success());
    let config = d.join("est.json");
    std::fs::write(
        &config,
        r#"{"array": {"n_sensors": 6, "spacing_m": 1.7, "speed_mps": 340.0, "f0_hz": 100.0},
            "freqs": {"multipliers": [1, 2]}, "k": 2}"#,
    )
    .unwrap();
    let report = d.join("r.json");
    let out = wanm(&["estimate", "--data", p(&data), "--config", p(&config), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let mut doas: Vec<f64> = r["doas_deg"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    doas.sort_by(f64::total_cmp);
    assert!((doas[0] - 70.0).abs() < 1e-3 && (doas[1] - 115.0).abs() < 1e-3, "{doas:?}");
    assert_eq!(r["status"], "ok");
}

#[test]
fn estimate_rejects_dimension_mismatch() {
    let d = dir("mismatch");
    let data = d.join("y.csv");
    DataMatrix::zeros(5, 2).save(&data).unwrap();
    let config = d.join("est.json");
    std::fs::write(
        &config,
        r#"{"array": {"n_sensors": 6, "spacing_m": 1.7, "speed_mps": 340.0, "f0_hz": 100.0},
            "freqs": {"multipliers": [1, 2]}, "k": 1}"#,
    )
    .unwrap();
    let out = wanm(&["--json-errors", "estimate", "--data", p(&data), "--config", p(&config), "--out", p(&d.join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "dimension_mismatch");
}

#[test]
fn certify_classifies_collision_cases() {
    let d = dir("certify");
    let exact = wanm(&["certify", "--doas", "0.5,0.1666666666666667", "--nf", "3", "--nm", "17", "--out", p(&d.join("a.csv"))]);
    assert!(exact.status.success());
    let v = stdout_json(&exact);
    assert_eq!(v["case"], 1);
    assert_eq!(v["collisions"][0]["freq_index"], 3);

    let near = wanm(&[
        "certify",
        "--doas",
        "0.25,0.001",
        "--nf",
        "6",
        "--nm",
        "17",
        "--delta-min",
        "0.01",
        "--out",
        p(&d.join("b.csv")),
    ]);
    assert_eq!(stdout_json(&near)["case"], 2);

    let curve = d.join("c.csv");
    let separated = wanm(&["certify", "--doas", "0.1,-0.2", "--nf", "2", "--nm", "257", "--flat", "--out", p(&curve)]);
    let v = stdout_json(&separated);
    assert_eq!(v["case"], 3);
    assert_eq!(v["valid"], true);
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("w,norm,psi_1,psi_2\n"));
    let verdict: Value = serde_json::from_str(&std::fs::read_to_string(d.join("c.verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict, v);
}

#[test]
fn collisions_lists_near_pairs() {
    let out = wanm(&["collisions", "--doas", "0.25,0.001", "--nf", "6", "--nm", "100"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["case"], "Case2");
    let freqs: Vec<u64> = v["entries"].as_array().unwrap().iter().map(|e| e["freq_index"].as_u64().unwrap()).collect();
    assert!(freqs.contains(&4), "{freqs:?}");
}

#[test]
fn duality_check_on_zero_data() {
    let d = dir("duality");
    let data = d.join("zero.csv");
    DataMatrix::zeros(4, 2).save(&data).unwrap();
    let out = wanm(&["duality-check", "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert!(v["primal"].as_f64().unwrap().abs() < 1e-8);
    assert!(v["dual"].as_f64().unwrap().abs() < 1e-8);
}

#[test]
fn duality_check_needs_consecutive_frequencies() {
    let d = dir("duality_gaps");
    let data = d.join("zero.csv");
    DataMatrix::zeros(4, 2).save(&data).unwrap();
    let out = wanm(&["duality-check", "--data", p(&data), "--freqs", "1,3"]);
    assert_eq!(out.status.code(), Some(2));
}
