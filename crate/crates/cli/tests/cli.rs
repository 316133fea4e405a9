use std::path::Path;
use std::process::Command;

fn nga() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nga"));
    c.env("RUST_LOG", "warn");
    c
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const BS_BOX: &str = r#"{"b0": [0,0], "b1": [0,0], "a0": [0,0], "a1": [0.2,0.2], "gamma": [1,1], "state_space": "real_line"}"#;

#[test]
fn bad_config_exits_two_with_field_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"kind": "table-one", "seed": 1,
            "model": {{"parameter_box": {BS_BOX}, "x0": 10, "maturity": -1, "steps": 0}}}}"#
    );
    let path = write(dir.path(), "bad.json", &cfg);
    let out = nga().args(["validate-config", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let errs: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let fields: Vec<&str> = errs.as_array().unwrap().iter().map(|e| e["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"model.maturity"));
    assert!(fields.contains(&"model.steps"));
}

#[test]
fn unparsable_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "broken.json", "{\"kind\": \"table-one\"");
    let out = nga().args(["validate-config", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_seed_without_config_exits_two() {
    let out = nga().args(["experiment", "table-one"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn black_scholes_price_bounds_collapse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        r#"{{"kind": "price-bounds", "seed": 3,
            "model": {{"parameter_box": {BS_BOX}, "x0": 10, "maturity": 0.0821917808219178, "steps": 30}},
            "payoff": {{"kind": "call", "strike": 10}}}}"#
    );
    let path = write(dir.path(), "bs.json", &cfg);
    let out = nga()
        .args(["price-bounds", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let (lo, hi) = (b["lower"].as_f64().unwrap(), b["upper"].as_f64().unwrap());
    assert!((hi - lo).abs() < 1e-12);
    // x0 sigma sqrt(T) / sqrt(2 pi) at the money: 10 * 0.2 * 0.28669 * 0.39894
    let analytic = 0.228_6;
    assert!((hi - analytic).abs() / analytic < 0.01, "{hi}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["path"].as_str().unwrap()).collect();
    for entry in std::fs::read_dir(dir.path().join("run")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(name == "manifest.json" || listed.contains(&name.as_str()), "orphan {name}");
    }
}

#[test]
fn experiment_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"kind": "table-one", "seed": 0,
        "model": {"parameter_box": {"b0": [-0.2,0.2], "b1": [-0.1,0.1], "a0": [0.3,0.7], "a1": [0.4,0.6], "gamma": [0.5,1.5], "state_space": "real_line"},
                  "x0": 10, "maturity": 0.0821917808219178, "steps": 30},
        "hedge": {"hidden": [8], "activation": "relu", "adam": {"learning_rate": 0.005, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
                  "batch_size": 32, "iterations": 10, "reduction": "sum", "policy": "markov", "normalize_inputs": true},
        "evaluation": {"paths": 200}}"#;
    let path = write(dir.path(), "t1.json", cfg);
    let mut outs = Vec::new();
    for run in ["a", "b"] {
        let out = nga()
            .args(["experiment", "table-one", "--seed", "42", "--format", "csv", "--threads", "1", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(dir.path().join(run))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outs.push(out.stdout);
    }
    assert_eq!(outs[0], outs[1]);
    assert!(String::from_utf8_lossy(&outs[0]).starts_with("payoff,strategy,price"));
    for f in ["table_one.json", "errors/call_fixed.csv", "errors/lookback_robust_running_max.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 42);
}

#[test]
fn missing_data_file_is_a_config_error_and_bad_data_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nga()
        .args(["estimate", "--seed", "1", "--data", "/no/such/file.csv", "--out"])
        .arg(dir.path().join("e"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let data = write(dir.path(), "p.csv", "date,close\n2020-01-01,1\n2020-01-02,-3\n");
    let out = nga()
        .args(["estimate", "--seed", "1", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("e2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
