//! End-to-end runs of the command-line binary.

use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn riskpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskpg")).args(args).output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_cfg(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CHAIN_A: &str = r#"{
  "model": { "kind": "chain", "transition": [[0.5, 0.5], [0.5, 0.5]], "cost": [0.0, 1.3862943611198906], "recurrent_state": 0 },
  "eval": { "steps": 2000, "checkpoint_every": 500 },
  "exact": { "m_list": [2, 16] }
}"#;

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), CHAIN_A);
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let o = riskpg(&["eval", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "checkpoints.csv"] {
        let a = std::fs::read(tmp.path().join("run0").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("run1").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let trace = std::fs::read_to_string(tmp.path().join("run0/trace.csv")).unwrap();
    assert!(trace.starts_with("m,t_m,gamma_m,M_m,tau_m,lambda_tilde,"));
    assert_eq!(trace.lines().count(), 2001);
}

#[test]
fn bad_row_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        r#"{ "model": { "kind": "chain", "transition": [[0.5, 0.5], [0.3, 0.5]], "cost": [0, 1], "recurrent_state": 0 } }"#,
    );
    let o = riskpg(&["exact", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 1"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), r#"{ "model": { "kind": "builtin", "name": "chain-a" }, "alhpa": 1 }"#);
    let o = riskpg(&["exact", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn summary_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), CHAIN_A);
    let out = tmp.path().join("o");
    let o = riskpg(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let s = summary(&out);
    assert_eq!(s["command"], "eval");
    assert_eq!(s["config"]["eval"]["eta"], 1.0);
    assert!((s["config"]["eval"]["lambda0"].as_f64().unwrap() - 4f64.ln()).abs() < 1e-15);
    assert!(s["timing"]["wall_time_secs"].as_f64().unwrap() >= 0.0);
    // the echoed config is itself a valid config
    let again = write_cfg(&tmp.path().join("o"), &s["config"].to_string());
    let out2 = tmp.path().join("o2");
    let o = riskpg(&["eval", "--config", &again, "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(out.join("trace.csv")).unwrap(),
        std::fs::read(out2.join("trace.csv")).unwrap()
    );
}

#[test]
fn exact_and_robust_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), CHAIN_A);
    let out = tmp.path().join("o");
    assert!(riskpg(&["exact", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let s = summary(&out);
    let lam = s["final"]["Lambda"].as_f64().unwrap();
    assert!((lam - 2.5f64.ln()).abs() < 1e-10);
    assert!(out.join("g_grid.csv").exists() && out.join("truncated.csv").exists());
    assert!(riskpg(&["robust", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let curve = std::fs::read_to_string(out.join("risk_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 9);
}

#[test]
fn replications_use_distinct_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), CHAIN_A);
    let out = tmp.path().join("o");
    let o = riskpg(&["eval", "--config", &cfg, "--out", out.to_str().unwrap(), "--replications", "3"]);
    assert!(o.status.success());
    let traces: Vec<_> = (0..3)
        .map(|k| std::fs::read(out.join(format!("rep-{k}/trace.csv"))).unwrap())
        .collect();
    assert_ne!(traces[0], traces[1]);
    assert_ne!(traces[1], traces[2]);
}

#[test]
fn shipped_training_config_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/train-chain-a-theta.json");
    let out = tmp.path().join("o");
    let o = riskpg(&["train", "--config", cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert!(s["final"]["final_grad_norm"].as_f64().unwrap() < 1e-2);
    assert_eq!(s["assertions"]["lower_bound_violations"], 0);
}

#[test]
fn shipped_configs_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for (cmd, file) in [
        ("exact", "exact-chain-a.json"),
        ("eval", "eval-chain-a.json"),
        ("train", "train-mdp-2x2.json"),
        ("robust", "robust-mixture-3.json"),
    ] {
        let out = tmp.path().join(file);
        let o = riskpg(&[cmd, "--config", &format!("{dir}/{file}"), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{file}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
