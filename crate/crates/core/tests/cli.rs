use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lowrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank"))
        .args(args)
        .output()
        .expect("spawn lowrank")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn gen_then_solve_recovers_signal() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("pr.json");
    let out = lowrank(&["gen", "--n", "6", "--m", "48", "--seed", "11", "--out", path_str(&inst)]);
    assert!(out.status.success());
    for solver in ["ap", "wf", "bm"] {
        let out = lowrank(&["solve", solver, "--input", path_str(&inst), "--seed", "2"]);
        assert!(out.status.success(), "{solver}: {}", String::from_utf8_lossy(&out.stderr));
        let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(doc["solver"], solver);
        assert_eq!(doc["success"], true, "{solver} failed: {doc}");
        assert_eq!(doc["report"]["estimate"].as_array().unwrap().len(), 6);
    }
}

#[test]
fn sync_instance_solves_with_gpm() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("sync.json");
    let out = lowrank(&["gen", "--problem", "sync", "--n", "20", "--sigma", "0.3", "--out", path_str(&inst)]);
    assert!(out.status.success());
    let out = lowrank(&["solve", "gpm", "--input", path_str(&inst)]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["report"]["converged"], true);
}

#[test]
fn gen_is_deterministic() {
    let a = lowrank(&["gen", "--n", "5", "--m", "20", "--seed", "4"]);
    let b = lowrank(&["gen", "--n", "5", "--m", "20", "--seed", "4"]);
    let c = lowrank(&["gen", "--n", "5", "--m", "20", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("pr.json");
    lowrank(&["gen", "--n", "4", "--m", "24", "--out", path_str(&inst)]);
    assert_eq!(lowrank(&["solve", "gpm", "--input", path_str(&inst)]).status.code(), Some(2));
    assert_eq!(lowrank(&["bench", "fig1", "--n", "0"]).status.code(), Some(2));
    assert_eq!(lowrank(&["bench", "fig1", "--tau", "-1"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(lowrank(&["solve", "ap", "--input", path_str(&missing)]).status.code(), Some(2));
}

#[test]
fn rank_deficient_measurements_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("pr.json");
    lowrank(&["gen", "--n", "4", "--m", "24", "--out", path_str(&inst)]);
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&inst).unwrap()).unwrap();
    let rows = doc["measurements"].as_array_mut().unwrap();
    let first = rows[0].clone();
    rows.iter_mut().for_each(|r| *r = first.clone());
    std::fs::write(&inst, doc.to_string()).unwrap();
    let out = lowrank(&["solve", "ap", "--input", path_str(&inst)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fig1.csv");
    let out = lowrank(&["bench", "fig1", "--n", "6", "--mn-grid", "4", "--trials", "3", "--out", path_str(&csv)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("algorithm,ensemble,n,m,trials,successes,success_rate,seed"));
    assert!(lines.next().unwrap().starts_with("AP,complex-gaussian,6,24,3,"));
}
