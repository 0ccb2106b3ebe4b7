//! Code cells run as child processes in the session working directory, with
//! captured streams, a time and memory budget, refused out-of-tree writes and
//! a before/after file delta.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::ReflectionSubject;
use crate::reasoning::{truncate_middle, truncate_tail};

pub const DEFAULT_TIMEOUT_SECS: f64 = 120.0;
pub const DEFAULT_MEMORY_BYTES: u64 = 2 * 1024 * 1024 * 1024;
/// Per-stream capture limit; the middle of longer output is dropped.
pub const STREAM_CAPTURE_LIMIT: usize = 1 << 20;
pub const TIMEOUT_MARKER: &str = "[timeout]";
/// Engine-private directory inside a workdir, excluded from file deltas.
pub const PRIVATE_DIR: &str = ".climb";

const RUNNER: &str = include_str!("../../resources/runner/runner.py");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCell {
    pub cell_id: String,
    pub source: String,
    #[serde(default)]
    pub declared_dependencies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    Failure,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub cell_id: String,
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub exception_text: Option<String>,
    pub exit_code: Option<i32>,
    pub files_created: Vec<String>,
    pub files_modified: Vec<String>,
    #[serde(default)]
    pub files_deleted: Vec<String>,
    /// Out-of-tree paths the cell tried to write, or links it left that
    /// point outside (those links are removed).
    #[serde(default)]
    pub rejected_paths: Vec<String>,
    pub duration: f64,
}

impl ExecutionResult {
    /// Last non-empty line of the exception text.
    pub fn final_error_line(&self) -> Option<String> {
        self.exception_text.as_ref().and_then(|t| t.lines().rev().find(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()))
    }

    pub fn reflection_subject(&self, max_chars: usize) -> ReflectionSubject {
        let succeeded = self.status == ExecStatus::Success;
        ReflectionSubject {
            kind: "code cell",
            succeeded,
            headline: match self.status {
                ExecStatus::Success => "Execution finished.".into(),
                ExecStatus::Failure => "Execution failed.".into(),
                ExecStatus::Timeout => format!("{TIMEOUT_MARKER} Execution was stopped at the time limit."),
            },
            body: summarize_for_feedback(self, max_chars),
            error_line: self.final_error_line(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Interpreter command, e.g. `["python3"]`.
    pub interpreter: Vec<String>,
    pub timeout_secs: f64,
    pub memory_bytes: u64,
    /// Packages that may be installed for a cell.
    pub dependency_allowlist: Vec<String>,
    /// Never reach a package index; missing dependencies fail the cell.
    pub offline: bool,
    /// Local wheel directory used for installs.
    pub package_cache: Option<PathBuf>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            interpreter: vec!["python3".into()],
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            memory_bytes: DEFAULT_MEMORY_BYTES,
            dependency_allowlist: Vec::new(),
            offline: true,
            package_cache: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("cannot prepare workspace {path}: {source}")]
    Workspace { path: String, source: std::io::Error },
    #[error("invalid session id `{0}`")]
    SessionId(String),
    #[error("code runtime unavailable: {0}")]
    Runtime(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub session_id: String,
    pub dir: PathBuf,
}

impl Workspace {
    pub fn private_dir(&self) -> PathBuf {
        self.dir.join(PRIVATE_DIR)
    }
}

/// Creates `<root>/<session_id>/` (which must not exist yet) and its private
/// directory.
pub fn prepare_workspace(root: &Path, session_id: &str) -> Result<Workspace, ExecError> {
    if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(ExecError::SessionId(session_id.to_string()));
    }
    let dir = root.join(session_id);
    let werr = |source| ExecError::Workspace { path: dir.display().to_string(), source };
    std::fs::create_dir_all(root).map_err(werr)?;
    std::fs::create_dir(&dir).map_err(werr)?;
    std::fs::create_dir_all(dir.join(PRIVATE_DIR).join("tmp")).map_err(werr)?;
    Ok(Workspace { session_id: session_id.to_string(), dir })
}

/// Checks that the interpreter starts; used by the hardware check.
pub fn check_runtime(config: &ExecConfig) -> Result<String, ExecError> {
    let (prog, args) = config.interpreter.split_first().ok_or_else(|| ExecError::Runtime("no interpreter configured".into()))?;
    let out = Command::new(prog).args(args).arg("--version").output().map_err(|e| ExecError::Runtime(format!("{prog}: {e}")))?;
    if !out.status.success() {
        return Err(ExecError::Runtime(format!("{prog} --version failed")));
    }
    let v = String::from_utf8_lossy(&out.stdout).trim().to_string();
    Ok(if v.is_empty() { String::from_utf8_lossy(&out.stderr).trim().to_string() } else { v })
}

/// Installs the runner in the private directory, rewriting it only when
/// the bundled copy changed.
fn runner_path(private: &Path) -> std::io::Result<PathBuf> {
    let p = private.join("runner.py");
    if std::fs::read(&p).ok().as_deref() != Some(RUNNER.as_bytes()) {
        std::fs::write(&p, RUNNER)?;
    }
    Ok(p)
}

/// Relative path (with `/` separators) to content hash; symlinks map to a
/// hash of their target text.
pub fn scan(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let path = e.path();
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            if rel == PRIVATE_DIR || rel == "events.log" {
                continue;
            }
            let Ok(ft) = e.file_type() else { continue };
            if ft.is_symlink() {
                let target = std::fs::read_link(&path).map(|t| t.display().to_string()).unwrap_or_default();
                out.insert(rel, format!("link:{target}"));
            } else if ft.is_dir() {
                walk(root, &path, out);
            } else if let Ok(bytes) = std::fs::read(&path) {
                out.insert(rel, hex::encode(Sha256::digest(&bytes)));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn spawn_capture<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<(Vec<u8>, usize)> {
    std::thread::spawn(move || {
        let mut kept = Vec::new();
        let mut total = 0usize;
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    total += n;
                    // Keep the head and a rolling tail.
                    if kept.len() < STREAM_CAPTURE_LIMIT {
                        kept.extend_from_slice(&buf[..n]);
                    } else {
                        let half = STREAM_CAPTURE_LIMIT / 2;
                        kept.extend_from_slice(&buf[..n]);
                        let excess = kept.len() - STREAM_CAPTURE_LIMIT;
                        kept.drain(half..half + excess);
                    }
                }
            }
        }
        (kept, total)
    })
}

fn decode_stream((bytes, total): (Vec<u8>, usize)) -> String {
    let s = String::from_utf8_lossy(&bytes).into_owned();
    if total > bytes.len() {
        let half = s.len() / 2;
        let cut = (0..=half).rev().find(|i| s.is_char_boundary(*i)).unwrap_or(0);
        format!("{}\n... [{} bytes of output omitted] ...\n{}", &s[..cut], total - bytes.len(), &s[cut..])
    } else {
        s
    }
}

#[cfg(unix)]
fn limit_child(cmd: &mut Command, memory_bytes: u64) {
    use std::os::unix::process::CommandExt;
    // SAFETY: only async-signal-safe calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            libc::setsid();
            let lim = libc::rlimit { rlim_cur: memory_bytes as libc::rlim_t, rlim_max: memory_bytes as libc::rlim_t };
            libc::setrlimit(libc::RLIMIT_AS, &lim);
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn limit_child(_cmd: &mut Command, _memory_bytes: u64) {}

#[cfg(unix)]
fn kill_group(pid: u32) {
    // SAFETY: the child leads its own process group after setsid.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_pid: u32) {}

#[derive(Debug, Default, Deserialize)]
struct RunnerStatus {
    exception: Option<String>,
    #[serde(default)]
    blocked: Vec<String>,
    #[serde(default)]
    missing_dependencies: Vec<String>,
}

fn install_dependencies(cell: &CodeCell, ws_private: &Path, config: &ExecConfig) -> Result<Option<PathBuf>, String> {
    if cell.declared_dependencies.is_empty() || config.offline {
        return Ok(None);
    }
    let site = ws_private.join("site-packages");
    let wanted: Vec<&String> = cell.declared_dependencies.iter().collect();
    let refused: Vec<&str> = wanted.iter().filter(|d| !config.dependency_allowlist.contains(d)).map(|d| d.as_str()).collect();
    if !refused.is_empty() {
        return Err(format!("dependencies not on the allowlist: {}", refused.join(", ")));
    }
    let (prog, args) = config.interpreter.split_first().ok_or("no interpreter configured")?;
    let mut cmd = Command::new(prog);
    cmd.args(args).args(["-m", "pip", "install", "--quiet", "--target"]).arg(&site);
    if let Some(cache) = &config.package_cache {
        cmd.arg("--no-index").arg("--find-links").arg(cache);
    }
    cmd.args(wanted.iter().map(|s| s.as_str()));
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("dependency installation failed: {}", String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")));
    }
    Ok(Some(site))
}

/// Runs a cell. Every outcome, including the runtime failing to start, is
/// returned as data.
pub fn execute(cell: &CodeCell, workdir: &Path, config: &ExecConfig) -> ExecutionResult {
    let started = Instant::now();
    let mut result = ExecutionResult {
        cell_id: cell.cell_id.clone(),
        status: ExecStatus::Failure,
        stdout: String::new(),
        stderr: String::new(),
        exception_text: None,
        exit_code: None,
        files_created: Vec::new(),
        files_modified: Vec::new(),
        files_deleted: Vec::new(),
        rejected_paths: Vec::new(),
        duration: 0.0,
    };
    let fail = |mut r: ExecutionResult, msg: String| {
        r.exception_text = Some(msg);
        r.duration = started.elapsed().as_secs_f64();
        r
    };
    if cell.source.trim().is_empty() {
        return fail(result, "ValueError: empty code cell".into());
    }
    let private = workdir.join(PRIVATE_DIR);
    let cells_dir = private.join("cells");
    let tmp_dir = private.join("tmp");
    if let Err(e) = std::fs::create_dir_all(&cells_dir).and_then(|_| std::fs::create_dir_all(&tmp_dir)) {
        return fail(result, format!("OSError: cannot prepare cell directory: {e}"));
    }
    let id: String = cell.cell_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    let cell_file = cells_dir.join(format!("{id}.py"));
    let status_file = cells_dir.join(format!("{id}.status.json"));
    let _ = std::fs::remove_file(&status_file);
    if let Err(e) = std::fs::write(&cell_file, &cell.source) {
        return fail(result, format!("OSError: cannot write cell: {e}"));
    }
    let runner = match runner_path(&private) {
        Ok(p) => p,
        Err(e) => return fail(result, format!("OSError: cannot install runner: {e}")),
    };
    let extra_site = match install_dependencies(cell, &private, config) {
        Ok(s) => s,
        Err(e) => return fail(result, format!("ModuleNotFoundError: {e}")),
    };
    let before = scan(workdir);
    let Some((prog, args)) = config.interpreter.split_first() else {
        return fail(result, "OSError: no interpreter configured".into());
    };
    let abs_workdir = workdir.canonicalize().unwrap_or_else(|_| workdir.to_path_buf());
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .arg("-u")
        .arg(&runner)
        .arg(&cell_file)
        .arg(&status_file)
        .arg(&abs_workdir)
        .current_dir(&abs_workdir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONHASHSEED", "0")
        .env("MPLCONFIGDIR", private.join("mpl"))
        .env("MPLBACKEND", "Agg")
        .env("TMPDIR", &tmp_dir)
        .env("OPENBLAS_NUM_THREADS", "1")
        .env("OMP_NUM_THREADS", "1")
        .env("MKL_NUM_THREADS", "1")
        .env("CLIMB_CELL_DEPENDENCIES", serde_json::to_string(&cell.declared_dependencies).expect("list serializes"));
    if let Some(site) = &extra_site {
        cmd.env("PYTHONPATH", site);
    }
    limit_child(&mut cmd, config.memory_bytes);
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return fail(result, format!("OSError: cannot start interpreter `{prog}`: {e}")),
    };
    drop(child.stdin.take().map(|mut s| s.flush()));
    let out = spawn_capture(child.stdout.take().expect("piped"));
    let err = spawn_capture(child.stderr.take().expect("piped"));
    let deadline = started + Duration::from_secs_f64(config.timeout_secs.max(0.0));
    let exit = loop {
        match child.try_wait() {
            Ok(Some(s)) => break Some(s),
            Ok(None) if Instant::now() >= deadline => {
                kill_group(child.id());
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => {
                kill_group(child.id());
                let _ = child.kill();
                break None;
            }
        }
    };
    // Grandchildren holding the pipes open are killed with the group.
    if exit.is_some() {
        kill_group(child.id());
    }
    result.stdout = decode_stream(out.join().unwrap_or_default());
    result.stderr = decode_stream(err.join().unwrap_or_default());
    let status: RunnerStatus = std::fs::read_to_string(&status_file).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default();
    let _ = std::fs::remove_file(&status_file);
    result.rejected_paths = status.blocked;
    match exit {
        None => {
            result.status = ExecStatus::Timeout;
            result.exception_text = Some(format!("{TIMEOUT_MARKER} TimeoutError: cell exceeded the {}s time limit and was stopped", config.timeout_secs));
        }
        Some(s) => {
            result.exit_code = s.code();
            if s.success() && status.exception.is_none() {
                result.status = ExecStatus::Success;
            } else {
                result.status = ExecStatus::Failure;
                result.exception_text = Some(match (status.exception, s.code()) {
                    (Some(t), _) => t,
                    (None, Some(c)) => format!("ProcessError: the cell process exited with code {c}"),
                    (None, None) => {
                        #[cfg(unix)]
                        let sig = std::os::unix::process::ExitStatusExt::signal(&s).unwrap_or(0);
                        #[cfg(not(unix))]
                        let sig = 0;
                        format!("ProcessError: the cell process was terminated by signal {sig}")
                    }
                });
            }
            if !status.missing_dependencies.is_empty() && result.exception_text.is_none() {
                result.exception_text = Some(format!("ModuleNotFoundError: {}", status.missing_dependencies.join(", ")));
            }
        }
    }
    let after = scan(workdir);
    for (rel, hash) in &after {
        if hash.starts_with("link:") && escapes(workdir, rel) {
            let _ = std::fs::remove_file(workdir.join(rel));
            result.rejected_paths.push(rel.clone());
            continue;
        }
        match before.get(rel) {
            None => result.files_created.push(rel.clone()),
            Some(h) if h != hash => result.files_modified.push(rel.clone()),
            _ => {}
        }
    }
    result.files_deleted = before.keys().filter(|k| !after.contains_key(*k)).cloned().collect();
    if !result.rejected_paths.is_empty() && result.status == ExecStatus::Success {
        result.status = ExecStatus::Failure;
        result.exception_text = Some(format!("PermissionError: path escape refused: {}", result.rejected_paths.join(", ")));
    }
    result.duration = started.elapsed().as_secs_f64();
    result
}

/// Whether the link at `rel` points outside `workdir`, judged lexically so
/// dangling links are covered too.
fn escapes(workdir: &Path, rel: &str) -> bool {
    let root = workdir.canonicalize().unwrap_or_else(|_| workdir.to_path_buf());
    let link = root.join(rel);
    let Ok(target) = std::fs::read_link(&link) else { return true };
    let joined = if target.is_absolute() { target } else { link.parent().unwrap_or(&root).join(target) };
    let mut norm = PathBuf::new();
    for c in joined.components() {
        match c {
            std::path::Component::ParentDir => {
                norm.pop();
            }
            std::path::Component::CurDir => {}
            other => norm.push(other),
        }
    }
    // A link to another link inside the tree is resolved one more hop.
    match std::fs::canonicalize(&link) {
        Ok(p) => !p.starts_with(&root) || !norm.starts_with(&root),
        Err(_) => !norm.starts_with(&root),
    }
}

/// Status line plus the tail of the exception (failures) or of stdout
/// (successes), within `max_chars`.
pub fn summarize_for_feedback(result: &ExecutionResult, max_chars: usize) -> String {
    let mut head = match result.status {
        ExecStatus::Success => "Status: success".to_string(),
        ExecStatus::Failure => "Status: failure".to_string(),
        ExecStatus::Timeout => format!("Status: timeout {TIMEOUT_MARKER}"),
    };
    if !result.files_created.is_empty() {
        head.push_str(&format!("\nFiles created: {}", result.files_created.join(", ")));
    }
    if !result.files_modified.is_empty() {
        head.push_str(&format!("\nFiles modified: {}", result.files_modified.join(", ")));
    }
    if !result.rejected_paths.is_empty() {
        head.push_str(&format!("\nRejected paths: {}", result.rejected_paths.join(", ")));
    }
    head.push('\n');
    let body = match result.status {
        ExecStatus::Success => result.stdout.clone(),
        _ => {
            let mut b = String::new();
            if !result.stdout.trim().is_empty() {
                b.push_str(&truncate_middle(result.stdout.trim_end(), max_chars / 4).0);
                b.push('\n');
            }
            b.push_str(result.exception_text.as_deref().unwrap_or("unknown failure"));
            b
        }
    };
    if head.chars().count() >= max_chars {
        return truncate_middle(&head, max_chars).0;
    }
    let room = max_chars - head.chars().count();
    format!("{head}{}", truncate_tail(&body, room).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(status: ExecStatus, stdout: &str, exc: Option<&str>) -> ExecutionResult {
        ExecutionResult {
            cell_id: "c".into(),
            status,
            stdout: stdout.into(),
            stderr: String::new(),
            exception_text: exc.map(str::to_string),
            exit_code: Some(0),
            files_created: vec![],
            files_modified: vec![],
            files_deleted: vec![],
            rejected_paths: vec![],
            duration: 0.0,
        }
    }

    #[test]
    fn summary_identity_and_tail() {
        let r = result(ExecStatus::Success, "hello\n", None);
        assert!(summarize_for_feedback(&r, 2000).ends_with("hello\n"));
        let long = "x".repeat(50_000) + "END";
        let s = summarize_for_feedback(&result(ExecStatus::Success, &long, None), 2000);
        assert!(s.chars().count() <= 2000);
        assert!(s.ends_with("END"));
        assert!(s.contains("truncated"));
    }

    #[test]
    fn timeout_summary_has_marker() {
        let s = summarize_for_feedback(&result(ExecStatus::Timeout, "", Some("[timeout] TimeoutError")), 500);
        assert!(s.contains(TIMEOUT_MARKER));
    }
}
