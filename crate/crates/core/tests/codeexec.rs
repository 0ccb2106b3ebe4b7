use std::time::Instant;

use climb_core::codeexec::{execute, prepare_workspace, summarize_for_feedback, CodeCell, ExecConfig, ExecStatus, TIMEOUT_MARKER};

fn cell(src: &str) -> CodeCell {
    CodeCell { cell_id: "cell-1".into(), source: src.into(), declared_dependencies: vec![] }
}

fn ws() -> (tempfile::TempDir, std::path::PathBuf) {
    let root = tempfile::tempdir().unwrap();
    let w = prepare_workspace(root.path(), "s1").unwrap();
    (root, w.dir)
}

#[test]
fn print_succeeds_and_captures_stdout() {
    let (_r, dir) = ws();
    let res = execute(&cell("print('hello')"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Success, "{res:?}");
    assert_eq!(res.stdout, "hello\n");
    assert_eq!(res.exit_code, Some(0));
}

#[test]
fn exception_is_reported_with_final_line() {
    let (_r, dir) = ws();
    let res = execute(&cell("x = 1\ny = x / 0\n"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert_eq!(res.final_error_line().unwrap(), "ZeroDivisionError: division by zero");
    assert!(summarize_for_feedback(&res, 2000).contains("ZeroDivisionError"));
}

#[test]
fn file_delta_is_tracked() {
    let (_r, dir) = ws();
    std::fs::write(dir.join("a.txt"), "one").unwrap();
    let res = execute(&cell("open('b.csv','w').write('x\\n1\\n')\nopen('a.txt','w').write('two')\n"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Success, "{res:?}");
    assert_eq!(res.files_created, vec!["b.csv".to_string()]);
    assert_eq!(res.files_modified, vec!["a.txt".to_string()]);
}

#[test]
fn state_does_not_persist_between_cells() {
    let (_r, dir) = ws();
    assert_eq!(execute(&cell("v = 3"), &dir, &ExecConfig::default()).status, ExecStatus::Success);
    let res = execute(&cell("print(v)"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert!(res.final_error_line().unwrap().starts_with("NameError"));
}

#[test]
fn infinite_loop_times_out() {
    let (_r, dir) = ws();
    let cfg = ExecConfig { timeout_secs: 1.0, ..Default::default() };
    let t = Instant::now();
    let res = execute(&cell("while True:\n    pass\n"), &dir, &cfg);
    assert!(t.elapsed().as_secs_f64() < 10.0);
    assert_eq!(res.status, ExecStatus::Timeout);
    assert!(summarize_for_feedback(&res, 500).contains(TIMEOUT_MARKER));
}

#[test]
fn child_processes_are_killed_on_timeout() {
    let (_r, dir) = ws();
    let cfg = ExecConfig { timeout_secs: 1.0, ..Default::default() };
    let src = "import subprocess, time\nsubprocess.Popen(['sleep', '30'])\ntime.sleep(30)\n";
    let t = Instant::now();
    let res = execute(&cell(src), &dir, &cfg);
    assert_eq!(res.status, ExecStatus::Timeout);
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn memory_bomb_fails_without_harming_the_host() {
    let (_r, dir) = ws();
    let cfg = ExecConfig { memory_bytes: 512 * 1024 * 1024, timeout_secs: 30.0, ..Default::default() };
    let res = execute(&cell("x = bytearray(4 * 1024 ** 3)\n"), &dir, &cfg);
    assert_eq!(res.status, ExecStatus::Failure);
    assert!(res.exception_text.unwrap().contains("MemoryError"));
}

#[test]
fn write_outside_workdir_is_refused() {
    let (_r, dir) = ws();
    let outside = tempfile::tempdir().unwrap();
    let target = outside.path().join("escape.txt");
    let src = format!("open({:?}, 'w').write('x')\n", target.display().to_string());
    let res = execute(&cell(&src), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert!(!target.exists());
    assert!(res.rejected_paths.iter().any(|p| p.contains("escape.txt")), "{res:?}");
    let rel = execute(&cell("open('../../escape2.txt', 'w').write('x')\n"), &dir, &ExecConfig::default());
    assert_eq!(rel.status, ExecStatus::Failure);
    assert!(!rel.rejected_paths.is_empty());
}

#[test]
fn escaping_symlink_is_removed() {
    let (_r, dir) = ws();
    let res = execute(&cell("import os\nos.symlink('/etc/passwd', 'pw')\n"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure, "{res:?}");
    assert!(!dir.join("pw").exists() && std::fs::symlink_metadata(dir.join("pw")).is_err());
    assert!(!res.rejected_paths.is_empty());
}

#[test]
fn nonzero_exit_is_a_failure() {
    let (_r, dir) = ws();
    let res = execute(&cell("import sys\nsys.exit(3)\n"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert_eq!(res.exit_code, Some(3));
    let res = execute(&cell("import os\nos._exit(4)\n"), &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert_eq!(res.exit_code, Some(4));
}

#[test]
fn missing_dependency_fails_offline() {
    let (_r, dir) = ws();
    let c = CodeCell { cell_id: "d".into(), source: "print(1)".into(), declared_dependencies: vec!["surely_not_a_real_pkg_xyz".into()] };
    let res = execute(&c, &dir, &ExecConfig::default());
    assert_eq!(res.status, ExecStatus::Failure);
    assert!(res.exception_text.unwrap().contains("surely_not_a_real_pkg_xyz"));
}

#[test]
fn workspace_ids_are_validated() {
    let root = tempfile::tempdir().unwrap();
    assert!(prepare_workspace(root.path(), "../x").is_err());
    prepare_workspace(root.path(), "ok").unwrap();
    assert!(prepare_workspace(root.path(), "ok").is_err());
}
