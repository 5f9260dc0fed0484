//! End-to-end runs of the `optosync` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_optosync");

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_SWEEP: &str = r#"
[simulation]
horizon = 120.0
window_periods = 5.0

[sweep]
engine = "time-domain"
metrics = ["Sq", "ED", "K"]
axis1 = { name = "eta_d", min = 0.0, max = 4.0, count = 3 }
axis2 = { name = "omega_d", min = 0.9, max = 1.1, count = 3 }
"#;

#[test]
fn simulate_writes_time_series() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fig2.csv");
    let fig2 = preset("paper_fig2.cfg");
    let o = run(&[
        "simulate",
        "-c",
        fig2.to_str().unwrap(),
        "--set",
        "simulation.horizon=60",
        "--set",
        "simulation.window_periods=3",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,Q1,P1,Q2,P2,ReA,ImA,Sq,ED,duan,Sqm");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 100);
    assert!(rows.iter().all(|r| r.len() == 11 && r.iter().all(|v| v.is_finite())));
    assert_eq!(rows.last().unwrap()[0], 60.0);
    assert!(stderr(&o).contains("tail averages"));
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let out = dir.path().join("sweep.csv");
    let o = run(&["sweep", "-c", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(lines[0], "eta_d,omega_d,Sq,ED,K,status,message");
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 7);
        assert!(!l.contains("NaN"));
    }

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["engine"], "time-domain");
    assert_eq!(meta["config_text"], SMALL_SWEEP);
    assert!(meta["settings"]["simulation"].is_object());
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL_SWEEP).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = run(&["sweep", "-c", cfg.to_str().unwrap(), "--threads", threads, "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let args = ["simulate", "--set", "simulation.horizon=40", "--set", "simulation.window_periods=3"];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn invalid_override_exits_with_input_error() {
    let o = run(&["simulate", "--set", "kappa=-1"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("kappa"), "{msg}");
    assert!(o.stdout.is_empty());
}

#[test]
fn malformed_config_names_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[cavity]\nkappa = 0.1\nkapa = 0.2\n").unwrap();
    let o = run(&["floquet", "-c", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_input_error() {
    let o = run(&["spectrum", "-c", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analytic_commands_refuse_detuned_oscillators() {
    // the reference point has omega_m2 = 1.005
    let o = run(&["floquet"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("precondition"), "{}", stderr(&o));
}

#[test]
fn floquet_and_stability_report_json() {
    let o = run(&["floquet", "--set", "omega_m2=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let cm1 = &v["solution"]["cavity"]["cm1"];
    let norm = cm1["re"].as_f64().unwrap().hypot(cm1["im"].as_f64().unwrap());
    assert!((norm - 5000.0).abs() < 1e-9 * 5000.0);
    assert!(v["stability"]["stable"].is_boolean());

    let o = run(&["stability", "--set", "omega_m2=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["condition1", "condition2", "stable", "eigenvalue_max_real_part", "constants"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn spectrum_csv_has_fixed_schema() {
    let o = run(&["spectrum", "--set", "omega_m2=1", "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "var_q_minus,var_p_minus,var_p_plus,K,quad_err_q_minus,quad_err_p_minus,quad_err_p_plus");
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), 7);
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert_eq!(run(&["plot"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
