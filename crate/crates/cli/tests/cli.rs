use std::process::Command;

use climb_core::harness::dataset;
use climb_core::harness::persona::default_persona;
use climb_core::harness::scripts::climb_script;

fn climb(root: &std::path::Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_climb"));
    c.env("CLIMB_SESSION_ROOT", root);
    c
}

#[test]
fn run_report_persist_resume() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("sessions");
    let data = dir.path().join("cohort.csv");
    std::fs::write(&data, dataset::generate(5).train_csv).unwrap();
    let policy = dir.path().join("policy.json");
    std::fs::write(&policy, serde_json::to_string(&climb_script()).unwrap()).unwrap();
    let persona = dir.path().join("persona.json");
    std::fs::write(&persona, serde_json::to_string(&default_persona()).unwrap()).unwrap();

    let out = climb(&root)
        .args(["run", "--dataset", data.to_str().unwrap(), "--seed", "5", "--logical-clock"])
        .args(["--policy", &format!("scripted:{}", policy.display()), "--persona", persona.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("finished: Completed"));

    let report = climb(&root).args(["report", "s00000005"]).output().unwrap();
    assert!(report.status.success());
    let text = String::from_utf8_lossy(&report.stdout).into_owned();
    assert!(text.contains("## Feature importance"));
    assert_eq!(text, std::fs::read_to_string(root.join("s00000005/final_report.md")).unwrap());

    let archive = dir.path().join("a.json");
    assert!(climb(&root).args(["persist", "s00000005", "--out", archive.to_str().unwrap()]).output().unwrap().status.success());
    let other = dir.path().join("other");
    let resumed = climb(&other).args(["resume", archive.to_str().unwrap()]).output().unwrap();
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    let again = climb(&other).args(["report", "s00000005"]).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&again.stdout), text);
}

#[test]
fn harness_writes_report_and_results() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = climb(&dir.path().join("s"))
        .args(["harness", "--replicates", "1", "--mode", "climb", "--out", out_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let md = std::fs::read_to_string(out_dir.join("comparison_report.md")).unwrap();
    assert!(md.contains("| did_not_finish | 0/1 |"), "{md}");
    assert!(md.contains("n/a"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(json["table"]["replicates"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_policy_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "a,b\n1,2\n").unwrap();
    let out = climb(dir.path()).args(["run", "--dataset", data.to_str().unwrap(), "--policy", "magic"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown policy"));
}
