use std::process::Command;

fn conpose() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conpose"))
}

#[test]
fn run_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("run.json");
    let traj = dir.path().join("traj.jsonl");
    let svg = dir.path().join("run.svg");
    let status = conpose()
        .args(["run", "--scenario", "scene-3", "--shape", "cylinder", "--seed", "2"])
        .arg("--out")
        .arg(&record)
        .arg("--trajectory")
        .arg(&traj)
        .status()
        .unwrap();
    assert!(status.success());
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&record).unwrap()).unwrap();
    assert_eq!(run["record"]["success"], true);
    let lines = std::fs::read_to_string(&traj).unwrap().lines().count();
    assert_eq!(lines, run["record"]["trajectory"].as_array().unwrap().len());

    let status = conpose().args(["render", "--record"]).arg(&record).arg("--out").arg(&svg).status().unwrap();
    assert!(status.success());
    roxmltree::Document::parse(&std::fs::read_to_string(&svg).unwrap()).unwrap();
}

#[test]
fn plan_and_select_print_json() {
    let out = conpose().args(["plan", "--scenario", "scene-5"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["key_waypoints"].as_array().unwrap().len() >= 2);

    let out = conpose().args(["select", "--scenario", "scene-1", "--selector", "analytical"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["outcome"]["evaluations_used"], 560);
}

#[test]
fn configuration_errors_exit_nonzero() {
    for args in [
        vec!["run", "--scenario", "/nonexistent/scene.json"],
        vec!["run", "--noise", "-1"],
        vec!["bench", "--shape", "sphere"],
        vec!["select", "--n-robots", "0"],
    ] {
        let out = conpose().args(&args).env_remove("CONPOSE_LLM_URL").output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
    }
    let out = conpose().args(["run", "--initializer", "llm"]).env_remove("CONPOSE_LLM_URL").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn failed_episode_still_exits_zero() {
    // a one-evaluation budget makes every analytical selection fail
    let out = conpose().args(["run", "--selector", "analytical", "--eval-budget", "1"]).output().unwrap();
    assert!(out.status.success());
}
