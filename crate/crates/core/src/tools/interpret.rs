//! Interpretability tools that only ever evaluate an already-fitted model:
//! permutation importance, per-group metrics and confidence strata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::data::{is_categorical_candidate, seeded_permutation};
use super::frame::{format_float, level_order, Frame};
use super::models::{auroc_macro, mae, mse, r2, ModelArtifact, Predictions, ProblemType};
use super::{
    data_err, derived_name, svg, Finding, ParamSpec, ParamType, Params, Tool, ToolCategory, ToolContext, ToolDescriptor, ToolEffects,
    ToolError, ToolOutcome, ToolReport,
};
use crate::reasoning::EpisodeCategory as E;

pub const DEFAULT_REPEATS: usize = 5;
pub const DEFAULT_MIN_GROUP_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2,
    Mse,
    Rmse,
    Mae,
    Auroc,
    Accuracy,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r2" | "r²" | "r_squared" => Some(Metric::R2),
            "mse" => Some(Metric::Mse),
            "rmse" => Some(Metric::Rmse),
            "mae" => Some(Metric::Mae),
            "auroc" | "auc" | "roc_auc" => Some(Metric::Auroc),
            "accuracy" | "acc" => Some(Metric::Accuracy),
            _ => None,
        }
    }

    pub fn default_for(pt: ProblemType) -> Self {
        match pt {
            ProblemType::Classification => Metric::Auroc,
            _ => Metric::R2,
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::R2 | Metric::Auroc | Metric::Accuracy)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::R2 => "r2",
            Metric::Mse => "mse",
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Auroc => "auroc",
            Metric::Accuracy => "accuracy",
        }
    }

    fn fits(self, pt: ProblemType) -> bool {
        match pt {
            ProblemType::Classification => matches!(self, Metric::Auroc | Metric::Accuracy),
            _ => !matches!(self, Metric::Auroc | Metric::Accuracy),
        }
    }
}

/// Metric of `preds` against encoded targets. `None` when undefined (for
/// example AUROC on a single class).
pub fn evaluate(metric: Metric, preds: &Predictions, y: &[f64], n_classes: usize) -> Option<f64> {
    if y.is_empty() {
        return None;
    }
    match preds {
        Predictions::Values(p) => match metric {
            Metric::R2 => Some(r2(p, y)),
            Metric::Mse => Some(mse(p, y)),
            Metric::Rmse => Some(mse(p, y).sqrt()),
            Metric::Mae => Some(mae(p, y)),
            _ => None,
        },
        Predictions::Probabilities(p) => {
            let labels: Vec<usize> = y.iter().map(|v| *v as usize).collect();
            match metric {
                Metric::Auroc => {
                    let present = (0..n_classes).filter(|c| labels.contains(c)).count();
                    if present < 2 {
                        None
                    } else {
                        Some(auroc_macro(p, &labels, n_classes))
                    }
                }
                Metric::Accuracy => {
                    let hits = p.iter().zip(&labels).filter(|(row, l)| argmax(row) == **l).count();
                    Some(hits as f64 / labels.len() as f64)
                }
                _ => None,
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Model, model-ready matrix and encoded target for rows with a known target.
pub struct EvalData {
    pub model: ModelArtifact,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Indices of the kept rows in the source frame.
    pub rows: Vec<usize>,
}

pub fn load_eval(ctx: &ToolContext<'_>, model_rel: &str, frame: &Frame) -> Result<EvalData, ToolError> {
    let model = ModelArtifact::load(&ctx.resolve(model_rel)?).map_err(|e| data_err(e.to_string()))?;
    let missing: Vec<&String> = model.feature_names.iter().filter(|f| !frame.has_column(f)).collect();
    if !missing.is_empty() {
        return Err(data_err(format!(
            "the dataset lacks model feature(s) {}",
            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let y_all = model.encode_target(frame).map_err(|e| data_err(e.to_string()))?;
    let x_all = model.matrix(frame).map_err(|e| data_err(e.to_string()))?;
    let rows: Vec<usize> = (0..frame.n_rows()).filter(|i| y_all[*i].is_some()).collect();
    Ok(EvalData {
        x: rows.iter().map(|&i| x_all[i].clone()).collect(),
        y: rows.iter().map(|&i| y_all[i].expect("kept")).collect(),
        rows,
        model,
    })
}

fn metric_param(p: &Params<'_>, pt: ProblemType) -> Result<Metric, ToolError> {
    let m = match p.opt_str("metric")? {
        Some(s) => Metric::parse(&s).ok_or_else(|| ToolError::Param { name: "metric".into(), message: format!("unknown metric `{s}`") })?,
        None => Metric::default_for(pt),
    };
    if !m.fits(pt) {
        return Err(ToolError::Param { name: "metric".into(), message: format!("{} does not apply to {}", m.as_str(), pt.as_str()) });
    }
    Ok(m)
}

/// Seed of the shuffle for (feature, repeat), independent of how many
/// repeats are requested.
pub fn shuffle_seed(seed: u64, feature: usize, repeat: usize) -> u64 {
    let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    for v in [feature as u64, repeat as u64] {
        h = (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(29) ^ 0x9e37_79b9_7f4a_7c15;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub mean: f64,
    pub repeats: Vec<f64>,
}

/// Mean metric degradation when each feature is shuffled.
pub fn permutation_importances(data: &EvalData, metric: Metric, repeats: usize, seed: u64) -> Result<(f64, Vec<Importance>), ToolError> {
    let k = data.model.classes.len();
    let score = |x: &[Vec<f64>]| evaluate(metric, &data.model.predict_rows(x), &data.y, k);
    let base = score(&data.x).ok_or_else(|| data_err(format!("{} is undefined on this data", metric.as_str())))?;
    let mut out = Vec::new();
    for (j, name) in data.model.feature_names.iter().enumerate() {
        let mut vals = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let perm = seeded_permutation(data.x.len(), shuffle_seed(seed, j, r));
            let mut x = data.x.clone();
            for (i, &src) in perm.iter().enumerate() {
                x[i][j] = data.x[src][j];
            }
            let s = score(&x).unwrap_or(base);
            vals.push(if metric.higher_is_better() { base - s } else { s - base });
        }
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        out.push(Importance { feature: name.clone(), mean, repeats: vals });
    }
    Ok((base, out))
}

fn stem(rel: &str) -> String {
    std::path::Path::new(rel).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn permutation_importance(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let model_rel = p.str("model")?;
    let path = p.str("dataset")?;
    let repeats = p.usize_or("repeats", DEFAULT_REPEATS)?;
    if repeats == 0 {
        return Err(ToolError::Param { name: "repeats".into(), message: "must be at least 1".into() });
    }
    let seed = p.seed_or(ctx.seed)?;
    let frame = ctx.read_frame(&path)?;
    let data = load_eval(ctx, &model_rel, &frame)?;
    let metric = metric_param(p, data.model.problem_type)?;
    let (base, mut imps) = permutation_importances(&data, metric, repeats, seed)?;
    imps.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.feature.cmp(&b.feature)));

    let base_name = stem(&model_rel).trim_end_matches(".model").to_string();
    let dir = std::path::Path::new(&model_rel).parent().map(|d| d.to_string_lossy().into_owned()).unwrap_or_default();
    let join = |f: String| if dir.is_empty() { f } else { format!("{dir}/{f}") };
    let csv_rel = join(format!("{base_name}_importance.csv"));
    let svg_rel = join(format!("{base_name}_importance.svg"));
    let mut csv = String::from("feature,mean_importance\n");
    for i in &imps {
        let _ = writeln!(csv, "{},{}", i.feature, format_float(i.mean));
    }
    ctx.write_text(&csv_rel, &csv)?;
    let labels: Vec<String> = imps.iter().map(|i| i.feature.clone()).collect();
    let values: Vec<f64> = imps.iter().map(|i| i.mean).collect();
    ctx.write_text(&svg_rel, &svg::bar_chart(&format!("Permutation importance ({})", metric.as_str()), &labels, &values))?;

    let mut s = format!("Permutation importance over {repeats} seeded shuffle(s) per feature; baseline {} = {:.4}.\n", metric.as_str(), base);
    let _ = writeln!(s, "{:<28}{:>12}", "feature", "importance");
    for i in &imps {
        let _ = writeln!(s, "{:<28}{:>12.6}", i.feature, i.mean);
    }
    let _ = write!(s, "The importance plot was saved to {svg_rel}.");
    let mut report = ToolReport::success(json!({"metric": metric.as_str(), "baseline": base, "importances": imps}), s);
    report.artifacts = vec![csv_rel, svg_rel];
    let mut effects = ToolEffects::default();
    effects.findings.push(Finding {
        kind: "feature_importance".into(),
        columns: imps.iter().take(5).map(|i| i.feature.clone()).collect(),
        message: "most important features by permutation importance".into(),
    });
    Ok(ToolOutcome { report, effects })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub value: Option<f64>,
    pub small_sample: bool,
}

/// Evaluates the fitted model within each level of `group`. No fitting.
pub fn subgroup_table(data: &EvalData, frame: &Frame, group: &str, metric: Metric, min_size: usize) -> Result<(Option<f64>, Vec<GroupRow>), ToolError> {
    let col = frame.require(group)?;
    let k = data.model.classes.len();
    let preds = data.model.predict_rows(&data.x);
    let overall = evaluate(metric, &preds, &data.y, k);
    let mut by: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (pos, &row) in data.rows.iter().enumerate() {
        let v = col.values[row].trim();
        let key = if super::frame::is_missing_token(v) { "(missing)".to_string() } else { v.to_string() };
        by.entry(key).or_default().push(pos);
    }
    let mut keys: Vec<String> = by.keys().cloned().collect();
    keys.sort_by(|a, b| level_order(a, b));
    let rows = keys
        .into_iter()
        .map(|g| {
            let idx = &by[&g];
            let sub = match &preds {
                Predictions::Values(v) => Predictions::Values(idx.iter().map(|&i| v[i]).collect()),
                Predictions::Probabilities(v) => Predictions::Probabilities(idx.iter().map(|&i| v[i].clone()).collect()),
            };
            let y: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            GroupRow { value: evaluate(metric, &sub, &y, k), n: idx.len(), small_sample: idx.len() < min_size, group: g }
        })
        .collect();
    Ok((overall, rows))
}

fn subgroup_analysis(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let model_rel = p.str("model")?;
    let path = p.str("dataset")?;
    let group = p.str("group_column")?;
    let min_size = p.usize_or("min_size", DEFAULT_MIN_GROUP_SIZE)?;
    let frame = ctx.read_frame(&path)?;
    let gcol = frame.require(&group)?;
    if !is_categorical_candidate(gcol, frame.n_rows()) {
        return Err(data_err(format!("group column `{group}` is not categorical ({} distinct values)", gcol.unique_count())));
    }
    let data = load_eval(ctx, &model_rel, &frame)?;
    let metric = metric_param(p, data.model.problem_type)?;
    let (overall, rows) = subgroup_table(&data, &frame, &group, metric, min_size)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
    let mut csv = format!("group,n,{},small_sample\n", metric.as_str());
    let mut s = format!("Subgroup analysis of the existing model by {group} ({}; no refitting):\n", metric.as_str());
    let _ = writeln!(s, "{:<20}{:>8}{:>12}", group, "n", metric.as_str());
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.group, r.n, r.value.map(format_float).unwrap_or_default(), r.small_sample);
        let _ = writeln!(s, "{:<20}{:>8}{:>12}{}", r.group, r.n, fmt(r.value), if r.small_sample { "  (small sample)" } else { "" });
    }
    let _ = writeln!(s, "{:<20}{:>8}{:>12}", "overall", data.y.len(), fmt(overall));
    let small: Vec<&str> = rows.iter().filter(|r| r.small_sample).map(|r| r.group.as_str()).collect();
    if !small.is_empty() {
        let _ = writeln!(s, "Groups below {min_size} rows: {}. Interpret their metrics with caution.", small.join(", "));
    }
    let table_rel = derived_name(&path, &format!("_subgroups_{}", sanitize(&group)));
    ctx.write_text(&table_rel, &csv)?;
    let _ = write!(s, "The subgroup table was saved to {table_rel}.");
    let mut report = ToolReport::success(json!({"group_column": group, "metric": metric.as_str(), "overall": overall, "groups": rows}), s);
    report.artifacts.push(table_rel);
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Easy,
    Ambiguous,
    Hard,
}

pub const EASY_CONFIDENCE: f64 = 0.75;
pub const HARD_CONFIDENCE: f64 = 0.25;

/// Stratum from the probability the model gives the true class.
pub fn stratum_of(confidence: f64) -> Stratum {
    if confidence >= EASY_CONFIDENCE {
        Stratum::Easy
    } else if confidence <= HARD_CONFIDENCE {
        Stratum::Hard
    } else {
        Stratum::Ambiguous
    }
}

fn confidence_stratify(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let model_rel = p.str("model")?;
    let path = p.str("dataset")?;
    let frame = ctx.read_frame(&path)?;
    let data = load_eval(ctx, &model_rel, &frame)?;
    if data.model.problem_type != ProblemType::Classification {
        return Err(data_err("confidence stratification applies to classification models only"));
    }
    let Predictions::Probabilities(probs) = data.model.predict_rows(&data.x) else {
        return Err(data_err("model did not return class probabilities"));
    };
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut csv = String::from("row,true_class_probability,stratum\n");
    for ((row, pr), y) in data.rows.iter().zip(&probs).zip(&data.y) {
        let conf = pr[*y as usize];
        let st = stratum_of(conf);
        let name = match st {
            Stratum::Easy => "easy",
            Stratum::Ambiguous => "ambiguous",
            Stratum::Hard => "hard",
        };
        *counts.entry(name).or_default() += 1;
        let _ = writeln!(csv, "{row},{},{name}", format_float(conf));
    }
    let rel = derived_name(&path, "_strata");
    ctx.write_text(&rel, &csv)?;
    let n = data.y.len().max(1) as f64;
    let mut s = format!(
        "Confidence-margin stratification (probability of the true class: easy >= {EASY_CONFIDENCE}, hard <= {HARD_CONFIDENCE}, otherwise ambiguous):\n"
    );
    for name in ["easy", "ambiguous", "hard"] {
        let c = counts.get(name).copied().unwrap_or(0);
        let _ = writeln!(s, "{name:<10}{c:>6} ({:.1}%)", 100.0 * c as f64 / n);
    }
    let _ = write!(s, "Per-row strata were saved to {rel}.");
    let mut report = ToolReport::success(json!({"counts": counts}), s);
    report.artifacts.push(rel);
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

struct FnTool(fn(&ToolContext<'_>, &Params<'_>) -> Result<ToolOutcome, ToolError>);

impl Tool for FnTool {
    fn run(&self, ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
        (self.0)(ctx, p)
    }
}

fn base_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::required("model", ParamType::String, "Saved model file.").from_context("model_path"),
        ParamSpec::required("dataset", ParamType::String, "Dataset file relative to the working directory.").from_context("dataset_path"),
    ]
}

fn descriptor(name: &str, doc: &str, params: Vec<ParamSpec>) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        doc: doc.into(),
        category: ToolCategory::Interpretability,
        applicable_stages: vec![E::ModelExploitation],
        param_schema: params,
        deterministic_given_seed: true,
    }
}

pub fn native_tools() -> Vec<(ToolDescriptor, Arc<dyn Tool>)> {
    let mut pi = base_params();
    pi.push(ParamSpec::optional("metric", ParamType::String, "Metric to degrade (default r2 or auroc)."));
    pi.push(ParamSpec::optional("repeats", ParamType::Integer, "Shuffles per feature.").with_default(json!(DEFAULT_REPEATS)));
    pi.push(ParamSpec::optional("seed", ParamType::Integer, "Random seed."));
    let mut sg = base_params();
    sg.push(ParamSpec::required("group_column", ParamType::String, "Categorical grouping column.").from_context("group_column"));
    sg.push(ParamSpec::optional("metric", ParamType::String, "Metric per group (default r2 or auroc)."));
    sg.push(ParamSpec::optional("min_size", ParamType::Integer, "Groups smaller than this are flagged.").with_default(json!(DEFAULT_MIN_GROUP_SIZE)));
    vec![
        (
            descriptor(
                "permutation_importance",
                "Feature importance of the saved model as the mean metric degradation over seeded shuffles of each feature; writes a table and a bar plot.",
                pi,
            ),
            Arc::new(FnTool(permutation_importance)),
        ),
        (
            descriptor(
                "subgroup_analysis",
                "Evaluates the saved model within each level of a categorical column without refitting; flags small groups and writes a table.",
                sg,
            ),
            Arc::new(FnTool(subgroup_analysis)),
        ),
        (
            descriptor(
                "confidence_stratify",
                "Splits rows into easy, ambiguous and hard strata by the probability the classifier gives the true class.",
                base_params(),
            ),
            Arc::new(FnTool(confidence_stratify)),
        ),
    ]
}
