//! Held-out evaluation and the reduction of replicate results into
//! comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::detect::FailureFlags;
use crate::reasoning::EpisodeCategory;
use crate::tools::models::{mae, mse, r2, Predictions};
use crate::tools::transform::apply_recipe;
use crate::tools::{Frame, ModelArtifact};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub n_test: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot prepare the test set: {0}")]
    Recipe(String),
    #[error("cannot predict: {0}")]
    Predict(String),
    #[error("model does not produce numeric predictions")]
    NotRegression,
    #[error("no test rows with a known target")]
    Empty,
    #[error("prediction and target lengths differ ({0} vs {1})")]
    Length(usize, usize),
}

/// MSE, RMSE, MAE and R² of `pred` against `target`. R² compares against
/// the mean of `target`.
pub fn metrics_from(pred: &[f64], target: &[f64]) -> Result<MetricsReport, EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::Length(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let m = mse(pred, target);
    Ok(MetricsReport { mse: m, rmse: m.sqrt(), mae: mae(pred, target), r2: r2(pred, target), n_test: pred.len() })
}

/// Replays the model's preprocessing on the held-out split and scores its
/// predictions. Rows with an unknown target are left out.
pub fn evaluate_model(model: &ModelArtifact, test: &Frame) -> Result<MetricsReport, EvalError> {
    let prepared = apply_recipe(&model.pipeline.preprocessing, test, Some(&model.target)).map_err(|e| EvalError::Recipe(e.to_string()))?;
    let Predictions::Values(pred) = model.predict(&prepared).map_err(|e| EvalError::Predict(e.to_string()))? else {
        return Err(EvalError::NotRegression);
    };
    let target = model.encode_target(&prepared).map_err(|e| EvalError::Predict(e.to_string()))?;
    let (p, t): (Vec<f64>, Vec<f64>) = pred.iter().zip(&target).filter_map(|(p, t)| t.map(|t| (*p, t))).unzip();
    metrics_from(&p, &t)
}

/// What one replicate contributes to the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub mode: String,
    pub seed: u64,
    pub session_id: String,
    pub completed: bool,
    pub flags: FailureFlags,
    pub planning_failures: BTreeMap<EpisodeCategory, bool>,
    pub exceptions: usize,
    pub user_queries: u64,
    /// `None` when the run produced no usable model.
    pub metrics: Option<MetricsReport>,
    #[serde(default)]
    pub evaluation_error: Option<String>,
}

/// Mean and spread of one quantity over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub sd: Option<f64>,
    /// Indices of values beyond 3·IQR from the quartiles.
    pub outliers: Vec<usize>,
}

pub const NOT_APPLICABLE: &str = "n/a";

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Summary { n, mean, sd, outliers: iqr_outliers(values, 3.0) })
    }

    pub fn display(&self) -> String {
        let sd = self.sd.map_or_else(|| NOT_APPLICABLE.to_string(), |s| format!("{s:.3}"));
        let mark = if self.outliers.is_empty() { "" } else { "*" };
        format!("{:.3} ± {sd}{mark}", self.mean)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices of values below Q1 − k·IQR or above Q3 + k·IQR, with linearly
/// interpolated quartiles.
pub fn iqr_outliers(values: &[f64], k: f64) -> Vec<usize> {
    if values.len() < 4 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.75));
    let iqr = q3 - q1;
    values.iter().enumerate().filter(|(_, v)| **v < q1 - k * iqr || **v > q3 + k * iqr).map(|(i, _)| i).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub replicates: usize,
    /// Flag name to "k/n".
    pub failures: BTreeMap<String, String>,
    /// Stage to the number of replicates with a planning failure there.
    pub planning_failures: BTreeMap<String, usize>,
    pub exceptions: Summary,
    pub user_queries: Summary,
    /// Metric name to its summary over replicates that produced a model.
    pub metrics: BTreeMap<String, Summary>,
    pub models_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub modes: BTreeMap<String, ModeSummary>,
    pub replicates: Vec<ReplicateResult>,
}

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("no replicate results to aggregate")]
    Empty,
}

pub fn aggregate(results: &[ReplicateResult]) -> Result<ComparisonTable, AggregateError> {
    if results.is_empty() {
        return Err(AggregateError::Empty);
    }
    let mut by_mode: BTreeMap<&str, Vec<&ReplicateResult>> = BTreeMap::new();
    for r in results {
        by_mode.entry(&r.mode).or_default().push(r);
    }
    let mut modes = BTreeMap::new();
    for (mode, rs) in by_mode {
        let n = rs.len();
        let failures = FailureFlags::NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| (name.to_string(), format!("{}/{n}", rs.iter().filter(|r| r.flags.as_array()[i]).count())))
            .collect();
        let planning_failures = EpisodeCategory::PLANNED
            .iter()
            .map(|c| (c.as_str().to_string(), rs.iter().filter(|r| r.planning_failures.get(c).copied().unwrap_or(false)).count()))
            .collect();
        let exceptions = Summary::of(&rs.iter().map(|r| r.exceptions as f64).collect::<Vec<_>>()).expect("non-empty");
        let user_queries = Summary::of(&rs.iter().map(|r| r.user_queries as f64).collect::<Vec<_>>()).expect("non-empty");
        let evaluated: Vec<&MetricsReport> = rs.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let mut metrics = BTreeMap::new();
        for (name, get) in [
            ("mse", (|m: &MetricsReport| m.mse) as fn(&MetricsReport) -> f64),
            ("rmse", |m| m.rmse),
            ("mae", |m| m.mae),
            ("r2", |m| m.r2),
        ] {
            if let Some(s) = Summary::of(&evaluated.iter().map(|m| get(m)).collect::<Vec<_>>()) {
                metrics.insert(name.to_string(), s);
            }
        }
        modes.insert(
            mode.to_string(),
            ModeSummary { replicates: n, failures, planning_failures, exceptions, user_queries, metrics, models_evaluated: evaluated.len() },
        );
    }
    Ok(ComparisonTable { modes, replicates: results.to_vec() })
}

impl ComparisonTable {
    pub fn to_markdown(&self) -> String {
        let names: Vec<&String> = self.modes.keys().collect();
        let header = |first: &str| {
            let mut s = format!("| {first} |");
            for n in &names {
                let _ = write!(s, " {n} |");
            }
            s.push('\n');
            s.push_str("|---|");
            for _ in &names {
                s.push_str("---|");
            }
            s.push('\n');
            s
        };
        let mut out = String::from("# Comparison report\n\n");
        for (m, s) in &self.modes {
            let _ = writeln!(out, "- {m}: {} replicates, {} evaluated models", s.replicates, s.models_evaluated);
        }
        out.push_str("\n## Failure categories (proportion of runs)\n\n");
        out.push_str(&header("Failure"));
        for flag in FailureFlags::NAMES {
            let _ = write!(out, "| {flag} |");
            for s in self.modes.values() {
                let _ = write!(out, " {} |", s.failures[flag]);
            }
            out.push('\n');
        }
        out.push_str("\n## Planning failures (runs with unfinished planned tasks)\n\n");
        out.push_str(&header("Stage"));
        for stage in EpisodeCategory::PLANNED {
            let _ = write!(out, "| {} |", stage.as_str());
            for s in self.modes.values() {
                let _ = write!(out, " {}/{} |", s.planning_failures.get(stage.as_str()).copied().unwrap_or(0), s.replicates);
            }
            out.push('\n');
        }
        out.push_str("\n## Exceptions and user effort (mean ± sd)\n\n");
        out.push_str(&header("Quantity"));
        let _ = write!(out, "| exceptions |");
        for s in self.modes.values() {
            let _ = write!(out, " {} |", s.exceptions.display());
        }
        let _ = write!(out, "\n| user queries |");
        for s in self.modes.values() {
            let _ = write!(out, " {} |", s.user_queries.display());
        }
        out.push_str("\n\n## Held-out metrics (mean ± sd)\n\n");
        out.push_str(&header("Metric"));
        for metric in ["mse", "rmse", "mae", "r2"] {
            let _ = write!(out, "| {metric} |");
            for s in self.modes.values() {
                let cell = s.metrics.get(metric).map_or_else(|| "no model".to_string(), Summary::display);
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        }
        out.push_str("\nValues marked * include a replicate beyond 3·IQR of the quartiles.\n");
        out
    }
}
