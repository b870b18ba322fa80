use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ghost_dsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghost-dsm"))
        .args(args)
        .env("GHOST_DSM_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn t1_convex_run_converges_to_one() {
    let o = ghost_dsm(&["run", "--problem", "T1", "--algorithm", "convex", "--x0", "0", "--max-iter", "500"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["stop_reason"], "Converged");
    assert!((v["final_x"][0].as_f64().unwrap() - 1.0).abs() < 1e-2);
}

#[test]
fn convex_method_on_t3_is_a_configuration_error() {
    let o = ghost_dsm(&["run", "--problem", "T3", "--algorithm", "convex", "--x0", "0,0"]);
    assert_eq!(code(&o), 3);
    let diag: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(diag["kind"], "Configuration");
    assert_eq!(diag["exit_code"], 3);
}

#[test]
fn bad_flags_are_configuration_errors() {
    assert_eq!(code(&ghost_dsm(&["run", "--problem", "T9"])), 3);
    assert_eq!(code(&ghost_dsm(&["run", "--problem", "T1", "--x0", "0,0"])), 3);
    assert_eq!(code(&ghost_dsm(&["run", "--problem", "T1", "--lambda", "2"])), 3);
    assert_eq!(code(&ghost_dsm(&["run", "--problem", "T1", "--algorithm", "fast"])), 3);
}

#[test]
fn check_passes_on_library_instance() {
    let o = ghost_dsm(&["check", "--problem", "T1"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["midpoint_convexity"], true);
    assert!(v["surrogate_consistency"]["max_a4"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn iteration_limit_exits_with_two() {
    let o = ghost_dsm(&["run", "--problem", "T3", "--x0", "0,0", "--max-iter", "5"]);
    assert_eq!(code(&o), 2);
    assert_eq!(stdout_json(&o)["stop_reason"], "MaxIter");
}

#[test]
fn infeasible_linearization_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    // g = 2 − x on K = [0, 1]: no direction satisfies the linearized constraint
    write(
        &p,
        r#"{"n": 1, "objective": {"kind": "affine", "linear": [1]},
            "g": [{"kind": "affine", "linear": [-1], "constant": 2}],
            "K": {"lower": [0], "upper": [1]}}"#,
    );
    let o = ghost_dsm(&["run", "--problem", p.to_str().unwrap(), "--algorithm", "convex"]);
    assert_eq!(code(&o), 4);
    let diag: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(diag["kind"], "AssumptionDViolated");
}

#[test]
fn trace_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let report = dir.path().join("r.json");
    let o = ghost_dsm(&[
        "run",
        "--problem",
        "T2",
        "--algorithm",
        "convex",
        "--x0",
        "1.5,-1.5",
        "--ghost-eps",
        "1,0.5",
        "--trace-out",
        trace.to_str().unwrap(),
        "--report-out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "nu,gamma,d_norm,phi,kappa,theta,kkt_residual,W_eps_1,W_eps_0.5,wall_time_ns"
    );
    let rows: Vec<&str> = lines.collect();
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["stop_reason"], "Converged");
    assert_eq!(rep["algorithm"], "convex");
    assert_eq!(rows.len(), rep["iterations"].as_u64().unwrap() as usize + 1);
    assert!(rows.iter().all(|r| r.split(',').count() == 10 && r.ends_with(",0")));
    assert_eq!(rep["classification"]["kind"], "KKT");
}

#[test]
fn reruns_give_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for k in 0..2 {
        let t = dir.path().join(format!("t{k}.csv"));
        let o = ghost_dsm(&["run", "--problem", "RAND-QP(5,4,3)", "--x0", "random", "--seed", "11", "--max-iter", "200", "--trace-out", t.to_str().unwrap()]);
        assert!(matches!(code(&o), 0 | 2));
        traces.push(std::fs::read(&t).unwrap());
    }
    assert!(!traces[0].is_empty());
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn exported_problem_runs_like_the_library_instance() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t4.json");
    assert_eq!(code(&ghost_dsm(&["export", "--problem", "T4", "--out", p.to_str().unwrap()])), 0);
    let a = ghost_dsm(&["run", "--problem", "T4", "--algorithm", "convex", "--x0", "0.3,0.7"]);
    let b = ghost_dsm(&["run", "--problem", p.to_str().unwrap(), "--algorithm", "convex", "--x0", "0.3,0.7"]);
    assert_eq!(code(&a), 0);
    let (va, mut vb) = (stdout_json(&a), stdout_json(&b));
    vb["problem"] = va["problem"].clone();
    assert_eq!(va, vb);
}

fn read_summary(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["id", "stop_reason", "iterations", "final_phi", "final_theta", "final_kkt_residual", "classification", "error"]
    );
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn batch_of_convex_instances_all_converge() {
    let dir = tempfile::tempdir().unwrap();
    for (id, x0) in [("T1", "[0.0]"), ("T2", "[1.2, 1.2]"), ("T4", "[0.2, 0.8]")] {
        write(
            &dir.path().join(format!("{id}.json")),
            &format!(r#"{{"problem": "{id}", "algorithm": "convex", "x0": {x0}, "trace_path": "{id}.csv"}}"#),
        );
    }
    let o = ghost_dsm(&["batch", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_summary(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["T1", "T2", "T4"]);
    assert!(rows.iter().all(|r| r[1] == "Converged" && r[6] == "KKT"));
    assert!(dir.path().join("T2.csv").is_file());
}

#[test]
fn empty_batch_gives_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.csv");
    let o = ghost_dsm(&["batch", dir.path().to_str().unwrap(), "--summary-out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(read_summary(&out).is_empty());
}

#[test]
fn malformed_config_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("a.json"), r#"{"problem": "T1", "algorithm": "convex", "x0": [0.0]}"#);
    write(&dir.path().join("b.json"), r#"{"problem": "T1", "algorithm": "#);
    write(&dir.path().join("c.json"), r#"{"problem": "T4", "algorithm": "general", "x0": [0.5, 0.5]}"#);
    let o = ghost_dsm(&["batch", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let rows = read_summary(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], "Converged");
    assert_eq!(rows[1][1], "Error");
    assert!(!rows[1][7].is_empty());
    assert_eq!(rows[2][1], "Converged");
}
