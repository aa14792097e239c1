use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn oscbath(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscbath"))
        .current_dir(dir)
        .args(args)
        .env("OSCBATH_LOG", "error")
        .output()
        .unwrap()
}

fn meta(path: &Path) -> serde_json::Value {
    let mut name = path.file_name().unwrap().to_os_string();
    name.push(".meta.json");
    serde_json::from_str(&fs::read_to_string(path.with_file_name(name)).unwrap()).unwrap()
}

#[test]
fn resonance_sweep_writes_rows_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = oscbath(dir.path(), &["resonance", "--lambda-sweep", "0.05:0.2:0.05", "--out", "res.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("res.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["lambda", "re_kappa", "im_kappa", "residual", "q_norm"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(&rows[2][0], "0.15");
    for r in &rows {
        let q: f64 = r[4].parse().unwrap();
        assert!((q - 1.0).abs() < 1e-5);
        assert!(r[2].parse::<f64>().unwrap() > 0.0);
    }
    let m = meta(&dir.path().join("res.csv"));
    assert_eq!(m["command"], "resonance");
    assert_eq!(m["grid_n"], 2000);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"lambda": 0.15, "grid": {"n": 1000}, "seed": 7}"#).unwrap();
    fs::write(dir.path().join("f2.json"), r#"{"a": 1.0, "b": 0.5, "profile": {"kind": "oscillator"}}"#).unwrap();
    let run = |name: &str| {
        let out = oscbath(dir.path(), &["correlate", "--config", "cfg.json", "--f2", "f2.json", "--t", "0:5:0.5", "--out", name]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read(dir.path().join(name)).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 12);
    assert_eq!(meta(&dir.path().join("a.csv"))["config_hash"], meta(&dir.path().join("b.csv"))["config_hash"]);
    // a different seed is a different configuration
    let out = oscbath(dir.path(), &["correlate", "--config", "cfg.json", "--f2", "f2.json", "--t", "0:5:0.5", "--seed", "8", "--out", "c.csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(meta(&dir.path().join("a.csv"))["config_hash"], meta(&dir.path().join("c.csv"))["config_hash"]);
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "{\n  \"beta\": 1.0,\n  \"lambda\": oops\n}").unwrap();
    let out = oscbath(dir.path(), &["resonance", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json:3:"), "{err}");

    fs::write(dir.path().join("missing.json"), r#"{"inputs": {"measure": "nowhere.json"}}"#).unwrap();
    let out = oscbath(dir.path(), &["dyson", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));

    fs::write(dir.path().join("cold.json"), r#"{"beta": -1.0}"#).unwrap();
    assert_eq!(oscbath(dir.path(), &["resonance", "--config", "cold.json"]).status.code(), Some(1));

    fs::write(dir.path().join("m.json"), r#"{"atoms": [{"mu": 1.0, "w": [0.01, 0.0]}]}"#).unwrap();
    let out = oscbath(dir.path(), &["dyson", "--measure", "m.json"]);
    assert_eq!(out.status.code(), Some(1), "an asymmetric measure is rejected");
}

#[test]
fn verification_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = oscbath(dir.path(), &["verify", "--suite", "identities", "--out", "id.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("id.json")).unwrap()).unwrap();
    assert_eq!(report[0]["passed"], true);
    assert!(report[0]["achieved"].as_f64().unwrap() < 1e-4);

    let out = oscbath(dir.path(), &["verify", "--suite", "appendix-b", "--trials", "2000"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report[0]["details"]["violations"].as_array().unwrap().len(), 0);

    // a 64-node grid cannot resolve the identities
    fs::write(dir.path().join("coarse.json"), r#"{"grid": {"n": 64}}"#).unwrap();
    let out = oscbath(dir.path(), &["verify", "--config", "coarse.json", "--suite", "identities", "--out", "coarse-id.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("coarse-id.json").is_file());
    assert!(dir.path().join("coarse-id.json.meta.json").is_file());
}

#[test]
fn identity_refinement_study() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"grid": {"n": 500}}"#).unwrap();
    let out = oscbath(dir.path(), &["identities", "--config", "cfg.json", "--trials", "20", "--refine", "2", "--out", "id.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("id.json")).unwrap()).unwrap();
    let ns: Vec<u64> = report["levels"].as_array().unwrap().iter().map(|l| l["n"].as_u64().unwrap()).collect();
    assert_eq!(ns, vec![500, 1000, 2000]);
    assert_eq!(report["refinement_convergent"], true);
}

#[test]
fn equilibrium_and_dyson() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("w.json"), r#"{"c": [0.5, 0.2], "f": {"kind": "gaussian", "sigma": 1.0}}"#).unwrap();
    let out = oscbath(dir.path(), &["equilibrium", "--weyl", "w.json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let omega = v["omega"].as_f64().unwrap();
    assert!(omega > 0.0 && omega <= 1.0);

    fs::write(dir.path().join("m.json"), r#"{"atoms":[{"mu":1.0,"w":[0.01,0.0]},{"mu":-1.0,"w":[0.01,0.0]}]}"#).unwrap();
    let out = oscbath(dir.path(), &["dyson", "--measure", "m.json", "--order", "2", "--t", "0:2:0.5", "--out", "d.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("d.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 10);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    // at t = 0 the series reduces to the harmonic value
    assert_eq!(&rows[0][1], &rows[0][3]);
    assert_eq!(oscbath(dir.path(), &["dyson", "--measure", "m.json", "--order", "9"]).status.code(), Some(1));
}
