use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::{Command, Output};

use memmo::trajopt::is_valid;
use memmo::{Path, Problem, Task};
use memmo_bench::Scenario;
use serde_json::{json, Value};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn memmo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memmo")).args(args).output().expect("binary runs")
}

fn s(p: &FsPath) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flags_and_bad_files_exit_with_two() {
    let out = memmo(&["eval", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = memmo(&["eval", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = memmo(&["inspect"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn planning_a_stored_task_recalls_a_valid_path() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("base-unimodal.json");
    let mem = dir.path().join("memory");
    let out = memmo(&["build", "--scenario", s(&scenario), "--n", "20", "--memory", s(&mem)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["n_stored"], 20);

    let plan_out = dir.path().join("plan");
    let out = memmo(&[
        "plan", "--scenario", s(&scenario), "--memory", s(&mem), "--out", s(&plan_out), "--task-index", "3", "--method", "knn",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let record: Value = serde_json::from_str(&fs::read_to_string(plan_out.join("path.json")).unwrap()).unwrap();
    assert_eq!(record["valid"], true);
    assert!(plan_out.join("path.svg").exists());

    let loaded = Scenario::load(&scenario).unwrap();
    let task: Task = serde_json::from_value(record["task"].clone()).unwrap();
    let path: Path = serde_json::from_value(record["path"].clone()).unwrap();
    let problem = Problem::from_task(&loaded.env, &task, loaded.scenario.steps).unwrap();
    assert!(is_valid(&problem, &path));

    let out = memmo(&["inspect", "--memory", s(&mem)]);
    assert_eq!(out.status.code(), Some(0));
    let meta: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(meta["n_stored"], 20);
}

#[test]
fn unreachable_cartesian_target_fails_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let fixed = json!([-1.0, 0.3, 0.3, 0.3]);
    let folded = json!([{ "config": [-0.2, 0.7, 0.8, 0.75], "label": "folded" }]);
    let scenario = json!({
        "id": "tiny-cartesian",
        "environment": scenarios().join("arm-shelf.env.json"),
        "task_spec": {
            "family": "cfg-to-cartesian",
            "fixed_init": fixed,
            "goal_box": { "lo": [-0.4, 1.2], "hi": [0.4, 1.6] },
            "waypoints": folded,
            "waypoint_mode": "first"
        },
        "n_train": 8,
        "n_test": 2,
        "methods": ["gpr"],
        "seed": 3,
        "metric": {
            "task_spec": {
                "family": "fixed-init-to-cfg",
                "fixed_init": fixed,
                "goal_box": { "lo": [0.8, 0.0, 0.0, 0.0], "hi": [1.6, 0.6, 0.6, 0.6] },
            "waypoints": folded,
            "waypoint_mode": "first"
            },
            "n_train": 8,
            "method": "gpr"
        }
    });
    let file = dir.path().join("tiny.json");
    fs::write(&file, scenario.to_string()).unwrap();
    let mem = dir.path().join("memory");
    let out = memmo(&["build", "--scenario", s(&file), "--memory", s(&mem)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for method in ["metric", "gpr"] {
        let out = memmo(&[
            "plan", "--scenario", s(&file), "--memory", s(&mem), "--out", s(&dir.path().join(method)), "--target", "5,5", "--method", method,
        ]);
        assert_eq!(out.status.code(), Some(1), "{method}: {}", String::from_utf8_lossy(&out.stdout));
        let record: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(record["status"], "failed");
    }
}
