#![cfg(feature = "cli")]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mv-ergo"))
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_w2_decay() -> Value {
    json!({
        "experiment": "w2-decay",
        "model": { "name": "ou", "theta": 1.0, "sigma": 1.4142135623730951 },
        "sim": { "dt": 0.005, "t_end": 2.0, "n_particles": 2048, "seed": 7 },
        "mu0": { "type": "dirac", "point": [3.0] },
        "reference": { "type": "standard_normal" },
        "sample_times": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]
    })
}

#[test]
fn list_models_shows_the_builtins() {
    let o = bin().arg("list-models").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    assert!(rows.len() >= 4, "{text}");
    for name in ["ou", "mean_field_linear", "exabc", "kinetic_gradient"] {
        assert!(rows.iter().any(|r| r.starts_with(name)), "missing {name}");
    }
}

#[test]
fn version_and_help_exit_zero() {
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(64));
}

#[test]
fn nonpositive_dt_reports_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_w2_decay();
    cfg["sim"]["dt"] = json!(0.0);
    let p = write_config(tmp.path(), "c.json", &cfg);
    let o = run("w2-decay", &p, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("sim.dt"), "{}", stderr(&o));
}

#[test]
fn unknown_field_reports_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_w2_decay();
    cfg["mu0"]["radius"] = json!(1.0);
    let p = write_config(tmp.path(), "c.json", &cfg);
    let o = run("w2-decay", &p, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("mu0"), "{}", stderr(&o));
}

#[test]
fn wrong_experiment_tag_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.json", &small_w2_decay());
    let o = run("simulate", &p, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("experiment"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run("w2-decay", &tmp.path().join("absent.json"), &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(74));
}

#[test]
fn w2_decay_writes_series_fit_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "c.json", &small_w2_decay());
    let out = tmp.path().join("out");
    let o = run("w2-decay", &p, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("t,value,stderr"));
    assert_eq!(series.lines().count(), 10);
    let fit: Value = serde_json::from_slice(&std::fs::read(out.join("fit.json")).unwrap()).unwrap();
    let lambda = fit["fit"]["lambda"].as_f64().unwrap();
    assert!((lambda - 1.0).abs() < 0.2, "lambda {lambda}");
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert!(manifest["files"].as_array().unwrap().iter().any(|f| f == "series.csv"));
}

#[test]
fn violated_condition_exits_with_a_finding() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "check",
        "model": { "name": "exabc" },
        "condition": "partial_dissipativity_h",
        "constants": { "K1": 4.0, "K2": 4.0, "KI": 0.0, "r0": 1.0, "delta1": 1.0, "delta2": 1.0 },
        "n_pairs": 5000,
        "radius": 3.0,
        "seed": 1
    });
    let p = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("out");
    let o = run("check", &p, &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["satisfied"], false);
    assert!(report["witness"]["x"].is_array());
}

#[test]
fn csv_output_does_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "simulate",
        "model": { "name": "exabc", "kw": 1.0, "ku": 0.5 },
        "sim": { "dt": 0.01, "t_end": 0.5, "n_particles": 3000, "seed": 5, "record_every": 10 },
        "init": { "type": "standard_normal" }
    });
    let p = write_config(tmp.path(), "c.json", &cfg);
    let mut series = Vec::new();
    for threads in ["1", "3", "8"] {
        let out = tmp.path().join(format!("out{threads}"));
        let o = run("simulate", &p, &out, &["--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        series.push(std::fs::read(out.join("series.csv")).unwrap());
    }
    assert_eq!(series[0], series[1]);
    assert_eq!(series[0], series[2]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let v: Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        let tag = v["experiment"].as_str().unwrap();
        assert!(
            [
                "check", "simulate", "phi", "fixed-point", "w2-decay", "entropy-decay", "lsi-gap",
                "harnack", "kinetic", "regularization"
            ]
            .contains(&tag),
            "{}",
            p.display()
        );
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn entropy_decay_config_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ou_entropy_decay.json");
    let out = tmp.path().join("out");
    let o = run("entropy-decay", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fit: Value = serde_json::from_slice(&std::fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert!((fit["entropy_fit"]["lambda"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(fit["consistent"], true);
}
