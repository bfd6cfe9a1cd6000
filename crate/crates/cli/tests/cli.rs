use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mnl");

fn mnl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn mnl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_to(config: &Path, out: &Path, sets: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for s in sets {
        args.extend(["--set", s]);
    }
    mnl(&args)
}

fn analysis(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap()
}

const LINEAR: &str = r#"{
  "scenario": "linear",
  "observable": "p1",
  "drift": { "matrix": [[0, 1], [-1, -1]] },
  "kappa": 1,
  "ensemble": { "n_traj": 64, "dt": 0.01, "seed": 1, "t_final": 5, "n_records": 10, "threads": 2 }
}"#;

const COMPOSITE: &str = r#"{
  "scenario": "composite",
  "drift": { "oscillator_pair": { "m": 1, "k": 1 } },
  "kappa": 0.1,
  "initial": { "gaussian": { "mean": [0, 0, 0, 0], "cov": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]] } },
  "ensemble": { "n_traj": 32, "dt": 0.01, "seed": 2, "t_final": 2, "n_records": 4 }
}"#;

const HOPF: &str = r#"{
  "scenario": "hopf",
  "drift": { "hopf": { "omega": 1, "epsilon": 0.5, "c": 0.5, "d": 1 } },
  "ensemble": { "n_traj": 4, "dt": 0.01, "seed": 4, "samples_per_traj": 50, "n_bins": 20 }
}"#;

const FREE: &str = r#"{
  "scenario": "free-measurement",
  "observable": "p1",
  "kappa": 1,
  "initial": { "point": [0, 0] },
  "ensemble": { "n_traj": 64, "dt": 0.01, "seed": 5, "t_final": 1, "record_times": [0.5, 1] }
}"#;

#[test]
fn linear_reports_closed_form_moments() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = analysis(&out);
    let close = |k: &str, v: f64| (a[k].as_f64().unwrap() - v).abs() < 1e-12;
    assert!(close("m11", 2.0) && close("m12", -1.0) && close("m22", 1.0), "{a}");
    assert!(close("eta", -std::f64::consts::FRAC_1_SQRT_2));
    assert!(close("onsager_residual", 1.0));
    assert!(out.join("timeseries.csv").exists() && out.join("manifest.json").exists());
}

#[test]
fn composite_gibbs_parameters_for_identity_state() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "composite.json", COMPOSITE);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = &analysis(&out)["gibbs"];
    assert!((g["beta"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(g["omega"].as_f64().unwrap().abs() < 1e-12);
    assert!((g["kt_eff"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn hopf_extremum_ratio_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "hopf.json", HOPF);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = analysis(&out)["extremum_ratio"].as_f64().unwrap();
    assert!((r - (1.0f64 / 24.0).exp()).abs() < 1e-12, "{r}");
    assert!(out.join("histogram.csv").exists());
}

#[test]
fn free_measurement_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "free.json", FREE);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 3, "{ts}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [("linear.json", LINEAR), ("composite.json", COMPOSITE), ("hopf.json", HOPF)] {
        let cfg = write_config(&dir, name, text);
        let (a, b) = (dir.path().join(format!("{name}.a")), dir.path().join(format!("{name}.b")));
        assert!(run_to(&cfg, &a, &[]).status.success());
        assert!(run_to(&cfg, &b, &[]).status.success());
        for file in ["analysis.json", "timeseries.csv", "histogram.csv"] {
            let (x, y) = (a.join(file), b.join(file));
            if x.exists() || y.exists() {
                assert_eq!(fs::read(&x).unwrap(), fs::read(&y).unwrap(), "{name}/{file}");
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_to(&cfg, &a, &["ensemble.threads=1"]).status.success());
    assert!(run_to(&cfg, &b, &["ensemble.threads=3"]).status.success());
    for file in ["analysis.json", "timeseries.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn override_equals_edited_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let edited = write_config(&dir, "edited.json", &LINEAR.replace("\"seed\": 1", "\"seed\": 9"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_to(&cfg, &a, &["ensemble.seed=9"]).status.success());
    assert!(run_to(&edited, &b, &[]).status.success());
    assert_eq!(fs::read(a.join("timeseries.csv")).unwrap(), fs::read(b.join("timeseries.csv")).unwrap());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["overrides"][0], "ensemble.seed=9");
    assert_eq!(manifest["scenario"], "linear");
}

#[test]
fn override_of_missing_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let o = mnl(&["validate", cfg.to_str().unwrap(), "--set", "ensemble.nope=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ensemble.nope"), "{}", stderr(&o));
}

#[test]
fn validate_accepts_well_formed_configs() {
    let dir = TempDir::new().unwrap();
    for (name, text) in [("l.json", LINEAR), ("c.json", COMPOSITE), ("h.json", HOPF), ("f.json", FREE)] {
        let cfg = write_config(&dir, name, text);
        let o = mnl(&["validate", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok");
    }
}

#[test]
fn unstable_drift_is_diagnosed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", &LINEAR.replace("[[0, 1], [-1, -1]]", "[[1, 1], [-1, -1]]"));
    let o = mnl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("drift.matrix") && e.contains("Hurwitz"), "{e}");
}

#[test]
fn composite_bound_violation_is_diagnosed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "composite.json", COMPOSITE);
    let o = mnl(&["validate", cfg.to_str().unwrap(), "--set", r#"initial={"point":[1,0,0,1]}"#]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("initial:") && e.contains("PSD bound"), "{e}");
}

#[test]
fn every_diagnostic_is_reported() {
    let dir = TempDir::new().unwrap();
    let text = LINEAR.replace("\"kappa\": 1", "\"kappa\": -1").replace("\"dt\": 0.01", "\"dt\": 0");
    let cfg = write_config(&dir, "linear.json", &text);
    let o = mnl(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.lines().filter(|l| l.starts_with("error: ")).count() >= 2, "{e}");
    assert!(e.contains("kappa") && e.contains("ensemble.dt"), "{e}");
}

#[test]
fn unknown_and_duplicate_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let unknown = write_config(&dir, "u.json", &LINEAR.replace("\"seed\": 1", "\"seed\": 1, \"sede\": 2"));
    let o = mnl(&["validate", unknown.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"), "{}", stderr(&o));

    let dup = write_config(&dir, "d.json", &LINEAR.replace("\"kappa\": 1", "\"kappa\": 1, \"kappa\": 2"));
    let o = mnl(&["validate", dup.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_a_config_error() {
    let o = mnl(&["validate", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergent_integration_exits_with_numeric_status() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &["ensemble.dt=5", "ensemble.t_final=5000", "ensemble.n_traj=4"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("numeric failure"));
}

#[test]
fn disabled_outputs_are_not_written() {
    let dir = TempDir::new().unwrap();
    let text = HOPF.replace("\"n_bins\": 20 }", "\"n_bins\": 20 },\n  \"outputs\": { \"histogram\": false }");
    let cfg = write_config(&dir, "hopf.json", &text);
    let out = dir.path().join("out");
    let o = run_to(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("histogram.csv").exists());
    assert!(out.join("timeseries.csv").exists());
}

#[test]
fn version_is_printed() {
    let o = mnl(&["version"]);
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.starts_with("mnl v"), "{s}");
    assert_eq!(s.trim(), format!("mnl {}", mnl_cli::VERSION));
}

#[test]
fn library_execute_matches_binary_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "linear.json", LINEAR);
    let out = dir.path().join("out");
    assert!(run_to(&cfg, &out, &[]).status.success());
    let (_, plan) = mnl_cli::prepare(&cfg, &[]).unwrap();
    let artifacts = mnl_cli::execute(&plan).unwrap();
    assert_eq!(artifacts.analysis, fs::read_to_string(out.join("analysis.json")).unwrap());
    assert_eq!(artifacts.timeseries.unwrap(), fs::read_to_string(out.join("timeseries.csv")).unwrap());
}
