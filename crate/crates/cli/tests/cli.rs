use std::path::Path;
use std::process::{Command, Output};

use levlab::sim::{step_metrics, SimTrace};
use serde_json::Value;

fn levlab(args: &[&str], data: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levlab"))
        .args(args)
        .env("LEVLAB_DATA_DIR", data)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn simulate_paper_pid_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = levlab(
        &["simulate", "--plant", "paper", "--controller", "pid-paper", "--duration", "2", "--out", csv.to_str().unwrap()],
        dir.path(),
    );
    let report = json(&out);
    let m = &report["metrics"];
    assert!(m["ts"].as_f64().unwrap() < 0.75);
    assert!(m["mp"].as_f64().unwrap() < 2.0);
    assert!(m["ess"].as_f64().unwrap() < 0.02);
    let tr = SimTrace::load_csv(&csv).unwrap();
    assert_eq!(tr.len(), 201);
    // metrics subcommand on the written file agrees
    let again = json(&levlab(&["metrics", csv.to_str().unwrap()], dir.path()));
    assert_eq!(again, *m);
}

#[test]
fn metrics_of_constant_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let mut tr = SimTrace::default();
    for k in 0..20 {
        tr.push(k as f64 * 0.01, 1.0, 1.0, 0.0);
    }
    tr.save_csv(&csv).unwrap();
    let m = json(&levlab(&["metrics", csv.to_str().unwrap()], dir.path()));
    assert_eq!(m["ts"], 0.0);
    assert_eq!(m["mp"], 0.0);
}

#[test]
fn rootlocus_of_second_order_plant_has_two_branches() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&levlab(&["rootlocus", "--plant", "paper", "--gains", "log:0.01:100:200"], dir.path()));
    let branches = v["branches"].as_array().unwrap();
    assert_eq!(branches.len(), 2);
    for b in branches {
        assert_eq!(b["points"].as_array().unwrap().len(), 200);
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = levlab(&["simulate", "--no-such-flag"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(levlab(&["simulate", "--duration", "-1"], dir.path()).status.code(), Some(2));
    assert_eq!(levlab(&["rootlocus", "--gains", "lin:1:2:3"], dir.path()).status.code(), Some(2));
    assert_eq!(levlab(&["tune", "--max-overshoot", "5", "--budget", "10"], dir.path()).status.code(), Some(2));
    // a missing file is a runtime failure
    assert_eq!(levlab(&["metrics", "/nonexistent/t.csv"], dir.path()).status.code(), Some(1));
    assert_eq!(levlab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn saved_run_recomputes_to_stored_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let report = json(&levlab(
        &["simulate", "--controller", "leadlag-paper", "--solver", "rk23:1e-6:0.1:1e-4:0.01", "--duration", "3", "--save", "--out", "/dev/null"],
        dir.path(),
    ));
    let id = report["run_id"].as_str().unwrap();
    let run = dir.path().join("runs").join(id);
    let rec: Value = serde_json::from_str(&std::fs::read_to_string(run.join("record.json")).unwrap()).unwrap();
    let tr = SimTrace::load_csv(&run.join("trace.csv")).unwrap();
    let m = step_metrics(&tr, 0.02).unwrap();
    for (k, v) in [("ts", m.ts), ("mp", m.mp), ("ess", m.ess), ("yss", m.yss)] {
        assert!((rec["metrics"][k].as_f64().unwrap() - v).abs() <= 1e-9, "{k}");
    }
}

#[test]
fn derive_plant_reports_geometry_model() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&levlab(&["derive-plant"], dir.path()));
    assert_eq!(v["transfer_function"]["den"].as_array().unwrap().len(), 3);
    assert!(v["params"]["k_eq"].as_f64().unwrap() > 0.0);
}

#[test]
fn tune_and_calib_fit_run() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&levlab(&["tune", "--max-overshoot", "5", "--budget", "60", "--seed", "3"], dir.path()));
    assert_eq!(v["result"]["feasible"], true);
    assert!(v["result"]["metrics"]["mp"].as_f64().unwrap() <= 5.0);
    let c = json(&levlab(&["calib-fit", "--samples", "5"], dir.path()));
    let d: Vec<f64> = c["samples"].as_array().unwrap().iter().map(|p| p["distance"].as_f64().unwrap()).collect();
    assert_eq!(d.len(), 5);
    assert!(d.windows(2).all(|w| w[0] != w[1]));
}

#[test]
fn hil_loop_in_process_unthrottled() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&levlab(
        &["hil-loop", "--controller", r#"{"kind":"pid","kp":0,"ki":20,"kd":0,"n":100}"#, "--duration", "1", "--baud", "0", "--save"],
        dir.path(),
    ));
    assert_eq!(v["loop_stats"]["iterations"], 100);
    assert!(v["run_id"].is_string());
}
