//! External tools: a manifest plus a subprocess speaking a small protocol.
//! The engine writes one request document to stdin; the tool logs to stderr
//! and prints its final report document on stdout. Exit code 0 is success.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ParamSpec, Params, Tool, ToolCategory, ToolContext, ToolDescriptor, ToolError, ToolOutcome, ToolReport, ToolStatus};
use crate::reasoning::EpisodeCategory;

pub const TIMEOUT_MARKER: &str = "[timeout]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalManifest {
    pub name: String,
    pub doc: String,
    pub category: ToolCategory,
    pub stages: Vec<EpisodeCategory>,
    /// Program followed by its arguments.
    pub command: Vec<String>,
    #[serde(default)]
    pub param_schema: Vec<ParamSpec>,
    pub timeout_seconds: f64,
}

impl ExternalManifest {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| ToolError::Data(format!("invalid tool manifest {}: {e}", path.display())))
    }

    pub fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: self.name.clone(),
            doc: self.doc.clone(),
            category: self.category,
            applicable_stages: self.stages.clone(),
            param_schema: self.param_schema.clone(),
            deterministic_given_seed: false,
        }
    }
}

/// The document a tool prints on stdout.
#[derive(Debug, Clone, Deserialize)]
struct WireReport {
    status: ToolStatus,
    #[serde(default)]
    output: Value,
    #[serde(default)]
    narrative: String,
    #[serde(default)]
    artifacts: Vec<String>,
}

pub struct ExternalTool {
    manifest: ExternalManifest,
}

impl ExternalTool {
    pub fn new(manifest: ExternalManifest) -> Self {
        ExternalTool { manifest }
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut r: R) -> std::thread::JoinHandle<Vec<u8>> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

#[cfg(unix)]
fn isolate(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    // SAFETY: setsid is async-signal-safe and touches no parent state.
    unsafe {
        cmd.pre_exec(|| {
            libc::setsid();
            Ok(())
        });
    }
}

#[cfg(not(unix))]
fn isolate(_cmd: &mut Command) {}

#[cfg(unix)]
fn kill_group(pid: u32) {
    // SAFETY: signals the process group created by setsid for this child.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_group(_pid: u32) {}

impl Tool for ExternalTool {
    fn run(&self, ctx: &ToolContext<'_>, params: &Params<'_>) -> Result<ToolOutcome, ToolError> {
        let m = &self.manifest;
        let Some((program, args)) = m.command.split_first() else {
            return Ok(ToolOutcome::failure(format!("tool `{}` declares an empty command", m.name)));
        };
        let request = json!({"params": Value::Object(params.raw().clone()), "workdir": ctx.workdir.display().to_string(), "seed": ctx.seed});
        let mut cmd = Command::new(program);
        cmd.args(args).current_dir(ctx.workdir).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        isolate(&mut cmd);
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return Ok(ToolOutcome::failure(format!("could not start `{program}`: {e}"))),
        };
        if let Some(mut stdin) = child.stdin.take() {
            let _ = stdin.write_all(request.to_string().as_bytes());
        }
        let out = spawn_reader(child.stdout.take().expect("piped"));
        let err = spawn_reader(child.stderr.take().expect("piped"));
        let deadline = Instant::now() + Duration::from_secs_f64(m.timeout_seconds.max(0.0));
        let status = loop {
            match child.try_wait()? {
                Some(s) => break Some(s),
                None if Instant::now() >= deadline => {
                    kill_group(child.id());
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        let stdout = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        let stderr = String::from_utf8_lossy(&err.join().unwrap_or_default()).into_owned();
        let logs: Vec<String> = stderr.lines().map(str::to_string).collect();
        let Some(status) = status else {
            let mut r = ToolReport::failure(format!("{TIMEOUT_MARKER} tool `{}` exceeded its {}s timeout", m.name, m.timeout_seconds));
            r.logs.extend(logs);
            return Ok(ToolOutcome { report: r, effects: Default::default() });
        };
        if !status.success() {
            let mut r = ToolReport::failure(format!("tool `{}` exited with {}", m.name, status.code().map_or("a signal".to_string(), |c| format!("code {c}"))));
            r.logs.extend(logs);
            return Ok(ToolOutcome { report: r, effects: Default::default() });
        }
        let wire: WireReport = match serde_json::from_str(stdout.trim()) {
            Ok(w) => w,
            Err(e) => {
                let mut r = ToolReport::failure(format!("tool `{}` printed no valid report: {e}", m.name));
                r.logs.extend(logs);
                return Ok(ToolOutcome { report: r, effects: Default::default() });
            }
        };
        let mut report = ToolReport { status: wire.status, logs, output: wire.output, narrative: wire.narrative, artifacts: wire.artifacts };
        if report.status == ToolStatus::Failure && report.logs.is_empty() {
            report.logs.push(format!("error: {}", report.narrative));
        }
        Ok(ToolOutcome { report, effects: Default::default() })
    }
}
