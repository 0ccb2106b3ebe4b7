//! The tool set: a registry of described capabilities, the native reference
//! tools, and the subprocess protocol for external tools.

pub mod automl;
pub mod data;
pub mod external;
pub mod frame;
pub mod interpret;
pub mod models;
pub mod stats;
pub mod svg;
pub mod transform;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::plan::{CtxValue, ProjectContext};
use crate::reasoning::EpisodeCategory;

pub use frame::{Column, DType, Frame};
pub use models::ModelArtifact;
pub use transform::{ImputeStrategy, TransformStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolCategory {
    DataCentric,
    ModelBuilding,
    Interpretability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Integer,
    Bool,
    StringList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    /// Project-memory key used when the parameter is omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_default: Option<String>,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType, doc: &str) -> Self {
        ParamSpec { name: name.into(), ty, required: true, doc: doc.into(), default: None, context_default: None }
    }

    pub fn optional(name: &str, ty: ParamType, doc: &str) -> Self {
        ParamSpec { required: false, ..Self::required(name, ty, doc) }
    }

    pub fn with_default(mut self, v: Value) -> Self {
        self.default = Some(v);
        self
    }

    pub fn from_context(mut self, key: &str) -> Self {
        self.context_default = Some(key.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub doc: String,
    pub category: ToolCategory,
    pub applicable_stages: Vec<EpisodeCategory>,
    pub param_schema: Vec<ParamSpec>,
    pub deterministic_given_seed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolReport {
    pub status: ToolStatus,
    pub logs: Vec<String>,
    pub output: Value,
    pub narrative: String,
    /// Paths relative to the session working directory.
    pub artifacts: Vec<String>,
}

impl ToolReport {
    pub fn success(output: Value, narrative: impl Into<String>) -> Self {
        ToolReport { status: ToolStatus::Success, logs: Vec::new(), output, narrative: narrative.into(), artifacts: Vec::new() }
    }

    pub fn failure(diagnostic: impl Into<String>) -> Self {
        let d = diagnostic.into();
        ToolReport { status: ToolStatus::Failure, logs: vec![format!("error: {d}")], output: Value::Null, narrative: d, artifacts: Vec::new() }
    }

    pub fn is_success(&self) -> bool {
        self.status == ToolStatus::Success
    }

    /// Text given back to the policy as tool feedback.
    pub fn feedback_text(&self) -> String {
        let mut s = String::new();
        match self.status {
            ToolStatus::Success => s.push_str("The tool produced the following report:\n"),
            ToolStatus::Failure => s.push_str("The tool failed:\n"),
        }
        s.push_str(self.narrative.trim_end());
        if self.status == ToolStatus::Failure && !self.logs.is_empty() {
            s.push_str("\nLogs:\n");
            s.push_str(&self.logs.join("\n"));
        }
        if !self.artifacts.is_empty() {
            s.push_str("\nArtifacts: ");
            s.push_str(&self.artifacts.join(", "));
        }
        s
    }
}

/// Something a tool learned that the session should record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: String,
    pub columns: Vec<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub path: String,
    pub problem_type: String,
    pub family: String,
    pub metric: String,
    pub cv_score: f64,
    pub cv_fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolEffects {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub context_updates: BTreeMap<String, CtxValue>,
    /// New working dataset, relative to the workdir.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<TransformStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutcome {
    pub report: ToolReport,
    #[serde(default)]
    pub effects: ToolEffects,
}

impl ToolOutcome {
    pub fn failure(diagnostic: impl Into<String>) -> Self {
        ToolOutcome { report: ToolReport::failure(diagnostic), effects: ToolEffects::default() }
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("invalid parameter `{name}`: {message}")]
    Param { name: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Frame(#[from] frame::FrameError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("path `{0}` escapes the working directory")]
    PathEscape(String),
}

pub fn data_err(msg: impl Into<String>) -> ToolError {
    ToolError::Data(msg.into())
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("a tool named `{0}` is already registered")]
    Duplicate(String),
    #[error("tool `{0}` has no applicable stages")]
    NoStages(String),
}

/// Inputs every tool run receives.
pub struct ToolContext<'a> {
    pub workdir: &'a Path,
    pub seed: u64,
    pub project: &'a ProjectContext,
    /// Data-engineering steps recorded so far, embedded in saved models.
    pub recipe: &'a [TransformStep],
}

impl ToolContext<'_> {
    /// Resolves a workdir-relative path, refusing anything outside it.
    pub fn resolve(&self, rel: &str) -> Result<PathBuf, ToolError> {
        resolve_inside(self.workdir, rel)
    }

    pub fn read_frame(&self, rel: &str) -> Result<Frame, ToolError> {
        let p = self.resolve(rel)?;
        if !p.exists() {
            return Err(data_err(format!("dataset `{rel}` does not exist in the working directory")));
        }
        Ok(Frame::read(&p)?)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<String, ToolError> {
        let p = self.resolve(rel)?;
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, text)?;
        Ok(rel.to_string())
    }
}

/// Lexically resolves `rel` under `root`, rejecting absolute paths and `..`
/// components that climb out.
pub fn resolve_inside(root: &Path, rel: &str) -> Result<PathBuf, ToolError> {
    let p = Path::new(rel);
    let p = if p.is_absolute() {
        p.strip_prefix(root).map_err(|_| ToolError::PathEscape(rel.to_string()))?.to_path_buf()
    } else {
        p.to_path_buf()
    };
    let mut depth: i64 = 0;
    let mut out = root.to_path_buf();
    for c in p.components() {
        match c {
            Component::Normal(s) => {
                depth += 1;
                out.push(s);
            }
            Component::CurDir => {}
            Component::ParentDir => {
                depth -= 1;
                if depth < 0 {
                    return Err(ToolError::PathEscape(rel.to_string()));
                }
                out.pop();
            }
            _ => return Err(ToolError::PathEscape(rel.to_string())),
        }
    }
    Ok(out)
}

/// `data/kidney.csv` + `_nan` -> `data/kidney_nan.csv`.
pub fn derived_name(rel: &str, suffix: &str) -> String {
    let p = Path::new(rel);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    let ext = p.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    let name = format!("{stem}{suffix}.{ext}");
    match p.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.join(name).to_string_lossy().into_owned(),
        _ => name,
    }
}

/// Typed access to a tool's parameter object.
pub struct Params<'a> {
    map: &'a Map<String, Value>,
}

impl<'a> Params<'a> {
    pub fn new(map: &'a Map<String, Value>) -> Self {
        Params { map }
    }

    pub fn raw(&self) -> &Map<String, Value> {
        self.map
    }

    fn perr(name: &str, message: impl Into<String>) -> ToolError {
        ToolError::Param { name: name.into(), message: message.into() }
    }

    pub fn opt_str(&self, name: &str) -> Result<Option<String>, ToolError> {
        match self.map.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::Bool(b)) => Ok(Some(b.to_string())),
            Some(_) => Err(Self::perr(name, "expected text")),
        }
    }

    pub fn str(&self, name: &str) -> Result<String, ToolError> {
        self.opt_str(name)?.ok_or_else(|| Self::perr(name, "is required"))
    }

    pub fn opt_f64(&self, name: &str) -> Result<Option<f64>, ToolError> {
        match self.map.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| Self::perr(name, "expected a number")),
            Some(_) => Err(Self::perr(name, "expected a number")),
        }
    }

    pub fn f64_or(&self, name: &str, default: f64) -> Result<f64, ToolError> {
        Ok(self.opt_f64(name)?.unwrap_or(default))
    }

    pub fn opt_usize(&self, name: &str) -> Result<Option<usize>, ToolError> {
        match self.opt_f64(name)? {
            None => Ok(None),
            Some(v) if v >= 0.0 && v.fract() == 0.0 => Ok(Some(v as usize)),
            Some(_) => Err(Self::perr(name, "expected a non-negative integer")),
        }
    }

    pub fn usize_or(&self, name: &str, default: usize) -> Result<usize, ToolError> {
        Ok(self.opt_usize(name)?.unwrap_or(default))
    }

    pub fn bool_or(&self, name: &str, default: bool) -> Result<bool, ToolError> {
        match self.map.get(name) {
            None | Some(Value::Null) => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Self::perr(name, "expected a boolean")),
            },
            Some(_) => Err(Self::perr(name, "expected a boolean")),
        }
    }

    /// A list given as an array or as comma-separated text.
    pub fn str_list(&self, name: &str) -> Result<Vec<String>, ToolError> {
        match self.map.get(name) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::String(s)) => Ok(s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(Self::perr(name, "expected a list of text")),
                })
                .collect(),
            Some(_) => Err(Self::perr(name, "expected a list")),
        }
    }

    pub fn seed_or(&self, default: u64) -> Result<u64, ToolError> {
        Ok(self.opt_f64("seed")?.map(|v| v as u64).unwrap_or(default))
    }
}

pub trait Tool: Send + Sync {
    fn run(&self, ctx: &ToolContext<'_>, params: &Params<'_>) -> Result<ToolOutcome, ToolError>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolDescriptor, Arc<dyn Tool>)>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding every native reference tool.
    pub fn with_native_tools() -> Self {
        let mut r = Self::new();
        for (d, t) in data::native_tools().into_iter().chain(automl::native_tools()).chain(interpret::native_tools()) {
            r.register(d, t).expect("native tool names are unique");
        }
        r
    }

    pub fn register(&mut self, descriptor: ToolDescriptor, tool: Arc<dyn Tool>) -> Result<(), RegistryError> {
        if self.tools.contains_key(&descriptor.name) {
            return Err(RegistryError::Duplicate(descriptor.name));
        }
        if descriptor.applicable_stages.is_empty() {
            return Err(RegistryError::NoStages(descriptor.name));
        }
        self.tools.insert(descriptor.name.clone(), (descriptor, tool));
        Ok(())
    }

    pub fn register_external(&mut self, manifest: external::ExternalManifest) -> Result<(), RegistryError> {
        let descriptor = manifest.descriptor();
        self.register(descriptor, Arc::new(external::ExternalTool::new(manifest)))
    }

    pub fn list(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|(d, _)| d.clone()).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.get(name).map(|(d, _)| d)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Tools available to episodes of `category`. Free-form episodes see all.
    pub fn available_for(&self, category: EpisodeCategory) -> Vec<ToolDescriptor> {
        self.tools
            .values()
            .filter(|(d, _)| category == EpisodeCategory::Freeform || d.applicable_stages.contains(&category))
            .map(|(d, _)| d.clone())
            .collect()
    }

    /// Fills omitted parameters from defaults and the project memory and
    /// substitutes `${key}` references.
    pub fn resolve_params(descriptor: &ToolDescriptor, params: &Value, project: &ProjectContext) -> Result<Map<String, Value>, ToolError> {
        let mut map = match params {
            Value::Object(m) => m.clone(),
            Value::Null => Map::new(),
            _ => return Err(ToolError::Param { name: "params".into(), message: "expected an object".into() }),
        };
        for (name, v) in map.iter_mut() {
            substitute(v, project).map_err(|key| ToolError::Param { name: name.clone(), message: format!("`${{{key}}}` is not set in the project memory") })?;
        }
        for spec in &descriptor.param_schema {
            if map.get(&spec.name).is_some_and(|v| !v.is_null()) {
                continue;
            }
            if let Some(key) = &spec.context_default {
                if let Some(v) = project.get(key) {
                    map.insert(spec.name.clone(), ctx_to_json(v));
                    continue;
                }
            }
            if let Some(d) = &spec.default {
                map.insert(spec.name.clone(), d.clone());
                continue;
            }
            if spec.required {
                return Err(ToolError::Param { name: spec.name.clone(), message: "is required".into() });
            }
        }
        Ok(map)
    }

    /// Runs a tool. Every failure, including panics, becomes a failure report.
    pub fn invoke(&self, name: &str, params: &Value, ctx: &ToolContext<'_>) -> ToolOutcome {
        let Some((descriptor, tool)) = self.tools.get(name) else {
            return ToolOutcome::failure(format!("unknown tool `{name}`"));
        };
        let map = match Self::resolve_params(descriptor, params, ctx.project) {
            Ok(m) => m,
            Err(e) => return ToolOutcome::failure(e.to_string()),
        };
        let run = catch_unwind(AssertUnwindSafe(|| tool.run(ctx, &Params::new(&map))));
        let mut outcome = match run {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => ToolOutcome::failure(e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                ToolOutcome::failure(format!("tool `{name}` crashed: {msg}"))
            }
        };
        for a in &outcome.report.artifacts {
            if resolve_inside(ctx.workdir, a).is_err() {
                return ToolOutcome::failure(format!("tool `{name}` produced an artifact outside the working directory: {a}"));
            }
        }
        if outcome.report.status == ToolStatus::Failure && outcome.report.logs.is_empty() {
            outcome.report.logs.push(format!("error: {}", outcome.report.narrative));
        }
        outcome
    }
}

pub fn ctx_to_json(v: &CtxValue) -> Value {
    match v {
        CtxValue::Bool(b) => Value::Bool(*b),
        CtxValue::Number(n) => serde_json::Number::from_f64(*n).map(Value::Number).unwrap_or(Value::Null),
        CtxValue::Text(s) => Value::String(s.clone()),
    }
}

/// Replaces `${key}` references; a whole-string reference to an unset key
/// is an error carrying the key.
fn substitute(v: &mut Value, project: &ProjectContext) -> Result<(), String> {
    match v {
        Value::String(s) => {
            let trimmed = s.trim();
            if let Some(key) = trimmed.strip_prefix("${").and_then(|r| r.strip_suffix('}')) {
                let cv = project.get(key).ok_or_else(|| key.to_string())?;
                *v = ctx_to_json(cv);
            } else if s.contains("${") {
                let mut out = s.clone();
                for (k, cv) in project.iter() {
                    out = out.replace(&format!("${{{k}}}"), &cv.to_string());
                }
                *s = out;
            }
        }
        Value::Array(items) => items.iter_mut().try_for_each(|i| substitute(i, project))?,
        Value::Object(m) => m.values_mut().try_for_each(|i| substitute(i, project))?,
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_inside_rejects_escapes() {
        let root = Path::new("/tmp/ws");
        assert_eq!(resolve_inside(root, "a/b.csv").unwrap(), PathBuf::from("/tmp/ws/a/b.csv"));
        assert_eq!(resolve_inside(root, "a/../b.csv").unwrap(), PathBuf::from("/tmp/ws/b.csv"));
        assert!(resolve_inside(root, "../x").is_err());
        assert!(resolve_inside(root, "/etc/passwd").is_err());
        assert!(resolve_inside(root, "/tmp/ws/ok.csv").is_ok());
    }

    #[test]
    fn derived_names_chain() {
        assert_eq!(derived_name("kidney.csv", "_nan"), "kidney_nan.csv");
        assert_eq!(derived_name("data/kidney_nan.csv", "_imputed"), "data/kidney_nan_imputed.csv");
    }

    #[test]
    fn params_resolve_from_context() {
        let d = ToolDescriptor {
            name: "t".into(),
            doc: String::new(),
            category: ToolCategory::DataCentric,
            applicable_stages: vec![EpisodeCategory::DataExploration],
            param_schema: vec![
                ParamSpec::required("dataset", ParamType::String, "").from_context("dataset_path"),
                ParamSpec::optional("k", ParamType::Integer, "").with_default(Value::from(3)),
            ],
            deterministic_given_seed: true,
        };
        let mut ctx = ProjectContext::new();
        assert!(ToolRegistry::resolve_params(&d, &Value::Null, &ctx).is_err());
        ctx.set_text("dataset_path", "d.csv").unwrap();
        ctx.set_text("target_column", "y").unwrap();
        let m = ToolRegistry::resolve_params(&d, &serde_json::json!({"note": "${target_column}"}), &ctx).unwrap();
        assert_eq!(m["dataset"], "d.csv");
        assert_eq!(m["k"], 3);
        assert_eq!(m["note"], "y");
    }
}
