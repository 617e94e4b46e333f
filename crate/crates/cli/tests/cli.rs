//! End-to-end runs of the binary on the shipped and constructed configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contact_ddp::ddp::rollout;
use contact_ddp::scenarios::config::ScenarioConfig;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_contact-ddp"));
    c.env_remove("CONTACT_DDP_OUT");
    c
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_configs_validate() {
    for name in ["stride.json", "astronaut.json"] {
        let o = run(&["validate", shipped(name).to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: "));
    }
}

#[test]
fn horizon_mismatch_is_one_located_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"name": "a", "scenario": {"stride": {"stride_length": 0.4, "steps": 3}}, "horizon": 3.0}"#);
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: horizon: "), "{err}");
}

#[test]
fn unreachable_stride_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"name": "a", "scenario": {"stride": {"stride_length": 2.0, "steps": 3}}}"#);
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("scenario.stride_length"), "{}", stderr(&o));
    let o = run(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn malformed_config_reports_line_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{\"name\": \"a\",\n \"scenario\": {\"astronaut\": {}},\n \"dt\": \"fast\"}");
    let o = run(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let cfg = write_config(tmp.path(), r#"{"name": "a", "scenario": {"astronaut": {}}, "dt": 0.007}"#);
    let o = run(&["run", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("scenario.duration"), "{}", stderr(&o));
}

#[test]
fn identical_runs_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("stride.json");
    let dirs: Vec<PathBuf> = (0..2).map(|k| tmp.path().join(k.to_string())).collect();
    for d in &dirs {
        let o = run(&["run", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["trajectory.csv", "diagnostics.csv", "iterations.csv"] {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert!(!a.is_empty() && a == b, "{f}");
    }
}

#[test]
fn zero_iterations_report_the_initial_rollout_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("stride.json");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--iterations", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(tmp.path());
    assert_eq!(s["iterations"], 0);

    let loaded = ScenarioConfig::load(&cfg).unwrap();
    let sc = loaded.config.build(&loaded.base_dir).unwrap();
    let t = rollout(&sc.problem(), &sc.warm_start).unwrap();
    let n = sc.horizon();
    let mut total = 0.0;
    for i in 0..n {
        total += sc.costs.value(&t.xs[i], Some(&t.us[i]), Some(&t.lambdas[i]), i);
    }
    total += sc.costs.value(&t.xs[n], None, None, n);
    let reported = s["cost"].as_f64().unwrap();
    assert!((reported - total).abs() <= 1e-9 * (1.0 + total), "{reported} vs {total}");
    assert_eq!(s["initial_cost"], s["cost"]);

    let text = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').skip(2).take(14).map(|v| v.parse().unwrap()).collect();
    assert!(last.iter().zip(t.xs[n].iter()).all(|(a, b)| a == b));
}

#[test]
fn baseline_comparison_writes_both_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", shipped("stride.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--ik-baseline", "--dump-kkt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["trajectory.csv", "ik_trajectory.csv", "diagnostics.csv", "ik_diagnostics.csv", "iterations.csv", "kkt.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let s = summary(tmp.path());
    let ratio = s["comparison"]["peak_force_ratio"].as_f64().unwrap();
    let ddp = s["diagnostics"]["peak_normal"].as_f64().unwrap();
    let ik = s["baseline"]["diagnostics"]["peak_normal"].as_f64().unwrap();
    assert!((ratio - ddp / ik).abs() < 1e-12);
    assert!(ratio > 0.0 && ratio <= 1.0, "{ratio}");
    assert!(s["wall_time_s"].as_f64().unwrap() > 0.0);
}

#[test]
fn astronaut_run_conserves_momentum() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", shipped("astronaut.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = summary(tmp.path());
    assert_eq!(s["converged"], true);
    assert!(s["diagnostics"]["angular_momentum_deviation"].as_f64().unwrap() <= 1e-2);
    assert_eq!(s["diagnostics"]["peak_normal"], 0.0);
}

#[test]
fn truncated_solve_exits_non_converged_with_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", shipped("astronaut.json").to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--iterations", "2", "--reg", "vxx"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let s = summary(tmp.path());
    assert_eq!(s["converged"], false);
    assert_eq!(s["iterations"], 2);
    assert!(tmp.path().join("trajectory.csv").is_file());
}

#[test]
fn env_var_sets_the_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", shipped("astronaut.json").to_str().unwrap(), "--iterations", "0"])
        .env("CONTACT_DDP_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("astronaut").join("summary.json").is_file());
}
