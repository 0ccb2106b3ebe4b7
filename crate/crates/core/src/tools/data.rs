//! Data-centric native tools: loading checks, exploration, missing-data
//! handling, encoding and pre-modelling screens.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::frame::{format_float, level_order, Column, DType, Frame};
use super::transform::{encode_with_levels, one_hot_name, unknown_name, ImputeStrategy, TransformStep};
use super::{
    data_err, derived_name, stats, svg, Finding, ParamSpec, ParamType, Params, Tool, ToolCategory, ToolContext,
    ToolDescriptor, ToolEffects, ToolError, ToolOutcome, ToolReport,
};
use crate::plan::CtxValue;
use crate::reasoning::EpisodeCategory as E;

pub const DEFAULT_DROP_THRESHOLD: f64 = 80.0;
pub const IDENTIFIER_UNIQUE_RATIO: f64 = 0.95;
pub const LEAKAGE_CORRELATION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSummary {
    pub mean: f64,
    pub sd: Option<f64>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl NumericSummary {
    pub fn of(v: &[f64]) -> Option<Self> {
        let s = stats::sorted(v);
        Some(NumericSummary {
            mean: stats::mean(v)?,
            sd: stats::sample_sd(v),
            min: *s.first()?,
            q1: stats::quantile_sorted(&s, 0.25)?,
            median: stats::quantile_sorted(&s, 0.5)?,
            q3: stats::quantile_sorted(&s, 0.75)?,
            max: *s.last()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub dtype: String,
    pub missing: usize,
    pub unique: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<NumericSummary>,
    pub categorical_candidate: bool,
}

/// Shape and per-column summary of a dataset; never holds raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub n_rows: usize,
    pub n_cols: usize,
    pub columns: Vec<ColumnProfile>,
}

/// Integer-valued with few distinct values, or text with few levels.
pub fn is_categorical_candidate(c: &Column, n_rows: usize) -> bool {
    let u = c.unique_count();
    let few = u < 20 || (n_rows > 0 && (u as f64) < 0.05 * n_rows as f64);
    match c.dtype() {
        DType::Text => few,
        _ => c.is_integer_valued() && few,
    }
}

impl DatasetProfile {
    pub fn of(frame: &Frame) -> Self {
        let columns = frame
            .columns()
            .iter()
            .map(|c| {
                let dtype = c.dtype();
                ColumnProfile {
                    name: c.name.clone(),
                    dtype: dtype.label().into(),
                    missing: c.missing_count(),
                    unique: c.unique_count(),
                    summary: if dtype.is_numeric() { c.numeric_present().and_then(|v| NumericSummary::of(&v)) } else { None },
                    categorical_candidate: is_categorical_candidate(c, frame.n_rows()),
                }
            })
            .collect();
        DatasetProfile { n_rows: frame.n_rows(), n_cols: frame.n_cols(), columns }
    }

    pub fn total_missing(&self) -> usize {
        self.columns.iter().map(|c| c.missing).sum()
    }

    pub fn missing_fraction(&self) -> f64 {
        let cells = self.n_rows * self.n_cols;
        if cells == 0 {
            0.0
        } else {
            self.total_missing() as f64 / cells as f64
        }
    }

    /// Text used in the state header: shape, types, missingness, summaries.
    pub fn to_text(&self) -> String {
        let mut s = format!("Dataset Shape: {} rows and {} columns\n", self.n_rows, self.n_cols);
        let _ = writeln!(s, "Total missing cells: {} ({:.2}%)", self.total_missing(), 100.0 * self.missing_fraction());
        s.push_str("Columns (name, type, missing, unique, summary):\n");
        for c in &self.columns {
            let _ = write!(s, "- {} [{}] missing={} unique={}", c.name, c.dtype, c.missing, c.unique);
            if let Some(ns) = &c.summary {
                let _ = write!(s, " median={} IQR=({} - {})", short(ns.median), short(ns.q1), short(ns.q3));
            }
            if c.categorical_candidate {
                s.push_str(" categorical");
            }
            s.push('\n');
        }
        s
    }
}

fn short(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{r}")
}

fn desc(name: &str, doc: &str, category: ToolCategory, stages: &[E], params: Vec<ParamSpec>, det: bool) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        doc: doc.into(),
        category,
        applicable_stages: stages.to_vec(),
        param_schema: params,
        deterministic_given_seed: det,
    }
}

fn dataset_param() -> ParamSpec {
    ParamSpec::required("dataset", ParamType::String, "Dataset file relative to the working directory.").from_context("dataset_path")
}

fn target_param(required: bool) -> ParamSpec {
    let p = if required { ParamSpec::required } else { ParamSpec::optional };
    p("target", ParamType::String, "Target column.").from_context("target_column")
}

fn seed_param() -> ParamSpec {
    ParamSpec::optional("seed", ParamType::Integer, "Random seed.")
}

macro_rules! tool {
    ($name:ident, $f:ident) => {
        struct $name;
        impl Tool for $name {
            fn run(&self, ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
                $f(ctx, p)
            }
        }
    };
}

tool!(CheckHardware, check_hardware);
tool!(CheckDataFile, check_data_file);
tool!(Eda, eda);
tool!(Descriptive, descriptive_statistics);
tool!(Missingness, missingness_profile);
tool!(NormalizeMissing, normalize_missing);
tool!(DropColumns, drop_columns);
tool!(DropMissingColumns, drop_missing_columns);
tool!(DropRowsMissing, drop_rows_missing);
tool!(Impute, impute);
tool!(Encode, encode_categoricals);
tool!(IdentifierScreen, identifier_screen);
tool!(LeakageScreen, leakage_screen);
tool!(KaplanMeier, kaplan_meier);

pub fn native_tools() -> Vec<(ToolDescriptor, Arc<dyn Tool>)> {
    use ToolCategory::DataCentric as DC;
    vec![
        (
            desc("check_hardware", "Reports CPU cores, memory and whether the code runtime is available.", DC, &[E::AlignmentCheck], vec![], true),
            Arc::new(CheckHardware),
        ),
        (
            desc(
                "check_data_file",
                "Loads the dataset, reports its shape and column types and records the profile in the project memory.",
                DC,
                &[E::AlignmentCheck, E::DataExploration],
                vec![dataset_param()],
                true,
            ),
            Arc::new(CheckDataFile),
        ),
        (
            desc(
                "eda",
                "Exploratory data analysis: shape, column types, numeric statistics, categorical candidates, missingness, rank correlations, IQR outliers, duplicates and a correlogram.",
                DC,
                &[E::DataExploration, E::DataEngineering],
                vec![dataset_param(), seed_param()],
                true,
            ),
            Arc::new(Eda),
        ),
        (
            desc(
                "descriptive_statistics",
                "Per-variable summary table (median (Q1 - Q3) or level counts), distribution plots and normality flags.",
                DC,
                &[E::DataExploration],
                vec![dataset_param()],
                true,
            ),
            Arc::new(Descriptive),
        ),
        (
            desc(
                "missingness_profile",
                "Per-column missing percentages in descending order, percentage of rows with any gap, and columns above the drop threshold.",
                DC,
                &[E::DataExploration, E::DataEngineering],
                vec![dataset_param(), ParamSpec::optional("threshold", ParamType::Number, "Drop threshold in percent.").with_default(json!(DEFAULT_DROP_THRESHOLD))],
                true,
            ),
            Arc::new(Missingness),
        ),
        (
            desc(
                "normalize_missing",
                "Replaces placeholder values (e.g. -999, unknown) with proper missing values. Writes a `_nan` file.",
                DC,
                &[E::DataEngineering],
                vec![
                    dataset_param(),
                    ParamSpec::optional("placeholders", ParamType::StringList, "Values that encode missing data.").from_context("missing_placeholders"),
                    ParamSpec::optional("columns", ParamType::StringList, "Restrict to these columns."),
                ],
                true,
            ),
            Arc::new(NormalizeMissing),
        ),
        (
            desc(
                "drop_columns",
                "Drops the listed columns. Writes a `_user_cols` file.",
                DC,
                &[E::DataExploration, E::DataEngineering, E::ModelBuilding],
                vec![dataset_param(), ParamSpec::required("columns", ParamType::StringList, "Columns to drop.")],
                true,
            ),
            Arc::new(DropColumns),
        ),
        (
            desc(
                "drop_missing_columns",
                "Drops columns whose missing percentage is at or above the threshold (default 80). Writes a `_nan` file.",
                DC,
                &[E::DataEngineering],
                vec![
                    dataset_param(),
                    ParamSpec::optional("threshold", ParamType::Number, "Threshold in percent.").with_default(json!(DEFAULT_DROP_THRESHOLD)),
                    ParamSpec::optional("exclude_columns", ParamType::StringList, "Columns never dropped."),
                ],
                true,
            ),
            Arc::new(DropMissingColumns),
        ),
        (
            desc(
                "drop_rows_missing",
                "Drops rows with a gap in the listed columns (all columns if none are listed). Writes a `_prepared` file.",
                DC,
                &[E::DataEngineering],
                vec![dataset_param(), ParamSpec::optional("columns", ParamType::StringList, "Columns checked for gaps.")],
                true,
            ),
            Arc::new(DropRowsMissing),
        ),
        (
            desc(
                "impute",
                "Fills gaps with mean, median, mode or seeded hot-deck draws, leaving excluded columns untouched. Writes an `_imputed` file.",
                DC,
                &[E::DataEngineering],
                vec![
                    dataset_param(),
                    ParamSpec::optional("strategy", ParamType::String, "mean | median | mode | hotdeck").with_default(json!("median")),
                    ParamSpec::optional("exclude_columns", ParamType::StringList, "Columns left as they are (e.g. the target)."),
                    seed_param(),
                ],
                true,
            ),
            Arc::new(Impute),
        ),
        (
            desc(
                "encode_categoricals",
                "One-hot encodes text columns (or the listed columns) with an explicit unknown-level bucket. Writes an `_encoded` file.",
                DC,
                &[E::DataEngineering],
                vec![
                    dataset_param(),
                    ParamSpec::optional("columns", ParamType::StringList, "Columns to encode."),
                    target_param(false),
                ],
                true,
            ),
            Arc::new(Encode),
        ),
        (
            desc(
                "identifier_screen",
                "Finds identifier-like columns: nearly all values unique and integer-valued or text.",
                DC,
                &[E::DataExploration, E::DataEngineering],
                vec![dataset_param(), target_param(false)],
                true,
            ),
            Arc::new(IdentifierScreen),
        ),
        (
            desc(
                "leakage_screen",
                "Finds columns that look like post-baseline information: |Spearman correlation| with the target at or above the threshold, or marked post-baseline in a metadata file.",
                DC,
                &[E::DataEngineering],
                vec![
                    dataset_param(),
                    target_param(true),
                    ParamSpec::optional("threshold", ParamType::Number, "Absolute correlation threshold.").with_default(json!(LEAKAGE_CORRELATION)),
                    ParamSpec::optional("metadata", ParamType::String, "Optional column metadata JSON file."),
                ],
                true,
            ),
            Arc::new(LeakageScreen),
        ),
        (
            desc(
                "kaplan_meier",
                "Kaplan-Meier survival curve from time and event columns.",
                DC,
                &[E::DataExploration, E::DataEngineering],
                vec![
                    dataset_param(),
                    ParamSpec::required("time_column", ParamType::String, "Time-to-event column.").from_context("time_column"),
                    ParamSpec::required("event_column", ParamType::String, "Event indicator column (1 = event).").from_context("event_column"),
                ],
                true,
            ),
            Arc::new(KaplanMeier),
        ),
    ]
}

fn check_hardware(_ctx: &ToolContext<'_>, _p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mem_kb = std::fs::read_to_string("/proc/meminfo").ok().and_then(|s| {
        s.lines().find(|l| l.starts_with("MemTotal:")).and_then(|l| l.split_whitespace().nth(1)).and_then(|v| v.parse::<u64>().ok())
    });
    let python = std::process::Command::new("python3")
        .arg("--version")
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(if o.stdout.is_empty() { &o.stderr } else { &o.stdout }).trim().to_string());
    let mut narrative = format!("CPU cores: {cores}\n");
    match mem_kb {
        Some(kb) => {
            let _ = writeln!(narrative, "Memory: {:.1} GiB", kb as f64 / 1024.0 / 1024.0);
        }
        None => narrative.push_str("Memory: unknown\n"),
    }
    match &python {
        Some(v) => {
            let _ = writeln!(narrative, "Code runtime: {v}");
        }
        None => narrative.push_str("Code runtime: not found (code cells cannot run)\n"),
    }
    narrative.push_str("The hardware is adequate for desk-scale tabular studies.");
    let report = ToolReport::success(json!({"cpu_cores": cores, "memory_kib": mem_kb, "python": python}), narrative);
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

fn check_data_file(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let frame = ctx.read_frame(&path)?;
    if frame.n_cols() == 0 {
        return Err(data_err("the dataset has no columns"));
    }
    let profile = DatasetProfile::of(&frame);
    let mut narrative = format!("Dataset Shape: {} rows and {} columns\nColumn Names and Types:\n", frame.n_rows(), frame.n_cols());
    for c in &profile.columns {
        let _ = writeln!(narrative, "{:<24}{:>8}", c.name, c.dtype);
    }
    let _ = write!(narrative, "Missing cells: {} ({:.2}%)", profile.total_missing(), 100.0 * profile.missing_fraction());
    let mut effects = ToolEffects::default();
    let u = &mut effects.context_updates;
    u.insert("dataset_path".into(), CtxValue::Text(path.clone()));
    if !ctx.project.contains("original_dataset_path") {
        u.insert("original_dataset_path".into(), CtxValue::Text(path.clone()));
    }
    u.insert("n_rows".into(), CtxValue::Number(frame.n_rows() as f64));
    u.insert("n_cols".into(), CtxValue::Number(frame.n_cols() as f64));
    u.insert("missing_fraction".into(), CtxValue::Number(profile.missing_fraction()));
    let mut report = ToolReport::success(serde_json::to_value(&profile).expect("profile serializes"), narrative);
    report.logs.push(format!("Loaded {path}"));
    Ok(ToolOutcome { report, effects })
}

fn numeric_columns(frame: &Frame) -> Vec<(&Column, Vec<Option<f64>>)> {
    frame.columns().iter().filter(|c| c.dtype().is_numeric()).filter_map(|c| c.numeric().map(|v| (c, v))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CorrPair {
    a: String,
    b: String,
    r: f64,
}

fn correlations(frame: &Frame) -> (Vec<String>, Vec<Vec<Option<f64>>>, Vec<CorrPair>) {
    let cols = numeric_columns(frame);
    let names: Vec<String> = cols.iter().map(|(c, _)| c.name.clone()).collect();
    let n = cols.len();
    let mut m = vec![vec![None; n]; n];
    let mut pairs = Vec::new();
    for i in 0..n {
        m[i][i] = Some(1.0);
        for j in (i + 1)..n {
            let r = stats::spearman_pairwise(&cols[i].1, &cols[j].1).map(|x| x.0);
            m[i][j] = r;
            m[j][i] = r;
            if let Some(r) = r {
                pairs.push(CorrPair { a: names[i].clone(), b: names[j].clone(), r });
            }
        }
    }
    (names, m, pairs)
}

fn eda(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let _seed = p.seed_or(ctx.seed)?;
    let frame = ctx.read_frame(&path)?;
    if frame.n_rows() == 0 {
        return Err(data_err("the dataset has zero rows"));
    }
    if frame.n_cols() == 0 {
        return Err(data_err("the dataset has no columns"));
    }
    let profile = DatasetProfile::of(&frame);
    let mut logs = vec![
        "Performing basic information analysis...".to_string(),
        "Performing descriptive statistics...".into(),
        "Performing missing values analysis...".into(),
        "Performing correlation analysis...".into(),
        "Performing potential outliers identification...".into(),
        "Performing duplicate records analysis...".into(),
    ];
    let mut out = format!("Dataset Shape: {} rows and {} columns\nColumn Names and Types:\n", frame.n_rows(), frame.n_cols());
    for c in &profile.columns {
        let _ = writeln!(out, "{:<24}{:>8}", c.name, c.dtype);
    }
    out.push_str("\nDescriptive Statistics for Numerical Features:\n");
    let _ = writeln!(out, "{:<20}{:>8}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}", "", "count", "mean", "std", "min", "25%", "50%", "75%", "max");
    for c in &profile.columns {
        if let Some(s) = &c.summary {
            let _ = writeln!(
                out,
                "{:<20}{:>8}{:>12.4}{:>12.4}{:>12.4}{:>12.4}{:>12.4}{:>12.4}{:>12.4}",
                c.name,
                profile.n_rows - c.missing,
                s.mean,
                s.sd.unwrap_or(f64::NAN),
                s.min,
                s.q1,
                s.median,
                s.q3,
                s.max
            );
        }
    }
    let cat: Vec<&str> = profile.columns.iter().filter(|c| c.categorical_candidate && c.dtype != "object").map(|c| c.name.as_str()).collect();
    let _ = writeln!(
        out,
        "\nIdentified numeric value columns that should most likely be considered categoricals:\n{:?}.\nThis is done by checking whether the column contains only integers and has a low number of unique values (<20 or <5% of rows).",
        cat
    );
    out.push_str("\nDetailed Information on Categorical Variables:\n");
    for c in frame.columns().iter().filter(|c| is_categorical_candidate(c, frame.n_rows()) || c.dtype() == DType::Text) {
        let levels = c.level_counts();
        let _ = writeln!(out, "{} - Unique Values: {}\nTop 5 Values:", c.name, levels.len());
        for (l, n) in levels.iter().take(5) {
            let _ = writeln!(out, "{l:<12}{n:>6}");
        }
        out.push('\n');
    }
    out.push_str("Missing Values Analysis:\n");
    for c in profile.columns.iter().filter(|c| c.missing > 0) {
        let _ = writeln!(out, "{:<24}{:>6}", c.name, c.missing);
    }
    let all_nan = profile.columns.iter().filter(|c| c.missing == profile.n_rows).count();
    let _ = writeln!(out, "\nCount of columns with all NaN values: {all_nan}");

    let (names, matrix, mut pairs) = correlations(&frame);
    let excluded: Vec<&str> = frame.columns().iter().filter(|c| !c.dtype().is_numeric()).map(|c| c.name.as_str()).collect();
    out.push_str("Correlation Analysis (Spearman rank correlation, numeric columns only):\n");
    if !excluded.is_empty() {
        let _ = writeln!(out, "Non-numeric columns excluded from correlation: {}", excluded.join(", "));
        logs.push(format!("Excluded non-numeric columns from correlation: {}", excluded.join(", ")));
    }
    pairs.sort_by(|x, y| y.r.abs().total_cmp(&x.r.abs()).then_with(|| x.a.cmp(&y.a)).then_with(|| x.b.cmp(&y.b)));
    let top: Vec<&CorrPair> = pairs.iter().take(10).collect();
    out.push_str("Top Correlated Feature Pairs:\n");
    for (i, cp) in top.iter().enumerate() {
        let _ = writeln!(out, "{i:<3}{:<20}{:<20}{:>12.6}", cp.a, cp.b, cp.r);
    }
    out.push_str("\nOutlier Identification for Numerical Features:\n");
    let mut outliers = BTreeMap::new();
    for (c, v) in numeric_columns(&frame) {
        let present: Vec<f64> = v.into_iter().flatten().collect();
        if let Some((lo, hi)) = stats::iqr_bounds(&present) {
            let k = stats::outlier_count(&present);
            let _ = writeln!(out, "{} - Outliers Count: {k}\n[Lower Bound: {}, Upper Bound: {}]", c.name, short(lo), short(hi));
            outliers.insert(c.name.clone(), json!({"count": k, "lower": lo, "upper": hi}));
        }
    }
    let dups = frame.duplicate_rows();
    let _ = writeln!(out, "\nDuplicate Records: {dups}");

    let fig = format!("figures/{}_correlogram.svg", file_stem(&path));
    ctx.write_text(&fig, &svg::heatmap("Correlogram (Spearman)", &names, &matrix))?;
    let output = json!({
        "profile": profile,
        "categorical_candidates": cat,
        "top_correlations": top,
        "correlation_excluded": excluded,
        "outliers": outliers,
        "duplicate_rows": dups,
    });
    let mut report = ToolReport::success(output, out);
    report.logs = logs;
    report.artifacts.push(fig);
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

fn file_stem(rel: &str) -> String {
    std::path::Path::new(rel).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

/// "632/1200 (52.7)".
pub fn count_summary(count: usize, total: usize) -> String {
    let pct = if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 };
    format!("{count}/{total} ({pct:.1})")
}

/// "3.0 (2.0 - 4.0)".
pub fn median_iqr_summary(v: &[f64]) -> Option<String> {
    let q = stats::quartiles(v)?;
    Some(format!("{:.1} ({:.1} - {:.1})", q.median, q.q1, q.q3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<(String, String)>,
}

/// Summary rows: numeric columns as median (Q1 - Q3); categorical columns
/// as per-level counts over present values, top 5 then "Other".
pub fn summarize_variables(frame: &Frame) -> Vec<VariableSummary> {
    let n = frame.n_rows();
    frame
        .columns()
        .iter()
        .map(|c| {
            let categorical = c.dtype() == DType::Text || is_categorical_candidate(c, n);
            if !categorical {
                let v = c.numeric_present().unwrap_or_default();
                return VariableSummary { variable: c.name.clone(), numeric: median_iqr_summary(&v), levels: Vec::new() };
            }
            let counts = c.level_counts();
            let total: usize = counts.iter().map(|x| x.1).sum();
            let mut levels: Vec<(String, String)> = counts.iter().take(5).map(|(l, k)| (l.clone(), count_summary(*k, total))).collect();
            let other: usize = counts.iter().skip(5).map(|x| x.1).sum();
            if counts.len() > 5 {
                levels.push(("Other".into(), count_summary(other, total)));
            }
            VariableSummary { variable: c.name.clone(), numeric: None, levels }
        })
        .collect()
}

fn descriptive_statistics(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let frame = ctx.read_frame(&path)?;
    if frame.n_cols() == 0 {
        return Err(data_err("the dataset has no columns"));
    }
    let rows = summarize_variables(&frame);
    let mut logs = vec!["Creating the descriptive statistics table...".to_string()];
    let mut table = String::from("Variable             Summary\n");
    let mut csv_rows = vec![Column::new("Variable", Vec::new()), Column::new("Summary", Vec::new())];
    for r in &rows {
        match &r.numeric {
            Some(s) => {
                let _ = writeln!(table, "{:<20}{:>22}", r.variable, s);
                csv_rows[0].values.push(r.variable.clone());
                csv_rows[1].values.push(s.clone());
            }
            None if r.levels.is_empty() => {
                let _ = writeln!(table, "{:<20}{:>22}", r.variable, "all missing");
                csv_rows[0].values.push(r.variable.clone());
                csv_rows[1].values.push("all missing".into());
            }
            None => {
                let _ = writeln!(table, "{}", r.variable);
                csv_rows[0].values.push(r.variable.clone());
                csv_rows[1].values.push(String::new());
                for (l, s) in &r.levels {
                    let _ = writeln!(table, "    {l:<16}{s:>22}");
                    csv_rows[0].values.push(format!("    {l}"));
                    csv_rows[1].values.push(s.clone());
                }
            }
        }
    }
    let summary_path = format!("{}__descriptive_stats.csv", path);
    let summary_frame = Frame::new(csv_rows)?;
    ctx.write_text(&summary_path, &summary_frame.to_csv())?;
    logs.push(format!("Saving the summary table to:\n{summary_path}"));

    let mut normal = Vec::new();
    let mut not_normal = Vec::new();
    let mut artifacts = vec![summary_path];
    logs.push("Creating plots for the data...".into());
    let stem = file_stem(&path);
    for c in frame.columns() {
        let categorical = c.dtype() == DType::Text || is_categorical_candidate(c, frame.n_rows());
        let fig = format!("figures/{stem}_dist_{}.svg", sanitize(&c.name));
        if categorical {
            let counts = c.level_counts();
            let labels: Vec<String> = counts.iter().take(20).map(|x| x.0.clone()).collect();
            let values: Vec<f64> = counts.iter().take(20).map(|x| x.1 as f64).collect();
            ctx.write_text(&fig, &svg::bar_chart(&c.name, &labels, &values))?;
            logs.push(format!("Plotted a bar plot for: '{}'", c.name));
        } else {
            let v = c.numeric_present().unwrap_or_default();
            if stats::looks_normal(&v) {
                normal.push(c.name.clone());
            } else {
                not_normal.push(c.name.clone());
            }
            ctx.write_text(&fig, &svg::histogram_box(&c.name, &v, 20))?;
            logs.push(format!("Plotted a histogram and box plot for: '{}'", c.name));
        }
        artifacts.push(fig);
    }
    logs.insert(2, format!("Normally distributed features:\n{normal:?}\nNot normally distributed features:\n{not_normal:?}"));
    let output = json!({"summary": rows, "normal": normal, "not_normal": not_normal});
    let mut report = ToolReport::success(output, table);
    report.logs = logs;
    report.artifacts = artifacts;
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessProfile {
    /// (column, percent missing), descending.
    pub per_column: Vec<(String, f64)>,
    pub rows_with_missing_pct: f64,
    pub rows_with_missing: usize,
    pub n_rows: usize,
    pub flagged_for_drop: Vec<String>,
    pub threshold: f64,
}

pub fn missingness_of(frame: &Frame, threshold: f64) -> MissingnessProfile {
    let n = frame.n_rows();
    let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
    let mut per_column: Vec<(String, f64)> = frame.columns().iter().map(|c| (c.name.clone(), pct(c.missing_count()))).collect();
    per_column.sort_by(|a, b| b.1.total_cmp(&a.1));
    let flagged = per_column.iter().filter(|(_, p)| *p >= threshold && *p > 0.0).map(|(c, _)| c.clone()).collect();
    let rows = frame.rows_with_missing();
    MissingnessProfile { per_column, rows_with_missing_pct: pct(rows), rows_with_missing: rows, n_rows: n, flagged_for_drop: flagged, threshold }
}

fn missingness_profile(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let threshold = p.f64_or("threshold", DEFAULT_DROP_THRESHOLD)?;
    let frame = ctx.read_frame(&path)?;
    let m = missingness_of(&frame, threshold);
    let mut out = String::from("Percentage of missing values per column (descending):\n");
    for (c, pct) in &m.per_column {
        let _ = writeln!(out, "{c:<24}{pct:>10.6}");
    }
    let _ = writeln!(out, "\nPercentage of total rows with any missing values: {:.2}%", m.rows_with_missing_pct);
    if !m.flagged_for_drop.is_empty() {
        let _ = writeln!(
            out,
            "Columns with {}%+ missing values (rule of thumb: these should generally be removed): {}",
            threshold,
            m.flagged_for_drop.join(", ")
        );
    }
    let mut effects = ToolEffects::default();
    if !m.flagged_for_drop.is_empty() {
        effects.context_updates.insert("high_missing_columns".into(), CtxValue::Text(m.flagged_for_drop.join(",")));
        effects.findings.push(Finding {
            kind: "high_missing".into(),
            columns: m.flagged_for_drop.clone(),
            message: format!("{} column(s) at or above {threshold}% missing", m.flagged_for_drop.len()),
        });
    }
    effects.context_updates.insert("missing_fraction".into(), CtxValue::Number(frame_missing_fraction(&frame)));
    Ok(ToolOutcome { report: ToolReport::success(serde_json::to_value(&m).expect("serializes"), out), effects })
}

pub fn frame_missing_fraction(frame: &Frame) -> f64 {
    let cells = frame.n_rows() * frame.n_cols();
    if cells == 0 {
        0.0
    } else {
        frame.total_missing() as f64 / cells as f64
    }
}

/// Shared bookkeeping for tools that write a derived dataset.
fn derived_outcome(
    ctx: &ToolContext<'_>,
    source: &str,
    suffix: &str,
    frame: &Frame,
    transform: TransformStep,
    narrative: String,
    output: Value,
) -> Result<ToolOutcome, ToolError> {
    let out_path = derived_name(source, suffix);
    frame.write(&ctx.resolve(&out_path)?)?;
    let mut effects = ToolEffects { derived_dataset: Some(out_path.clone()), transforms: vec![transform], ..Default::default() };
    let u = &mut effects.context_updates;
    u.insert("dataset_path".into(), CtxValue::Text(out_path.clone()));
    u.insert("n_rows".into(), CtxValue::Number(frame.n_rows() as f64));
    u.insert("n_cols".into(), CtxValue::Number(frame.n_cols() as f64));
    u.insert("missing_fraction".into(), CtxValue::Number(frame_missing_fraction(frame)));
    let mut report = ToolReport::success(output, format!("{narrative}\nThe data has been saved to {out_path}"));
    report.artifacts.push(out_path);
    Ok(ToolOutcome { report, effects })
}

fn normalize_missing(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let mut frame = ctx.read_frame(&path)?;
    let placeholders = p.str_list("placeholders")?;
    let mut columns = p.str_list("columns")?;
    if columns.is_empty() {
        columns = frame.names();
    }
    let mut per_column = BTreeMap::new();
    for name in &columns {
        let col = frame.column_mut(name).ok_or_else(|| data_err(format!("no such column `{name}`")))?;
        let mut k = 0;
        for v in col.values.iter_mut() {
            let t = v.trim();
            let is_placeholder = placeholders.iter().any(|p| p == t);
            // Missing tokens other than the empty cell are rewritten too, so
            // every gap reads the same way downstream.
            let is_token = !t.is_empty() && super::frame::is_missing_token(t);
            if is_placeholder || is_token {
                v.clear();
                if is_placeholder {
                    k += 1;
                }
            }
        }
        if k > 0 {
            per_column.insert(name.clone(), k);
        }
    }
    let total: usize = per_column.values().sum();
    let narrative = format!("{total} placeholder value(s) converted to missing values.");
    let transform = TransformStep::NormalizeMissing { placeholders: placeholders.clone(), columns };
    derived_outcome(ctx, &path, "_nan", &frame, transform, narrative, json!({"converted": per_column, "total": total}))
}

fn drop_columns(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let frame = ctx.read_frame(&path)?;
    let columns = p.str_list("columns")?;
    if columns.is_empty() {
        return Err(ToolError::Param { name: "columns".into(), message: "no columns given".into() });
    }
    let out = frame.drop_columns(&columns)?;
    let narrative = format!("Dropped {} column(s): {}. {} columns remain.", columns.len(), columns.join(", "), out.n_cols());
    let mut o = derived_outcome(ctx, &path, "_user_cols", &out, TransformStep::DropColumns { columns: columns.clone() }, narrative, json!({"dropped": columns}))?;
    forget_dropped(ctx, &mut o.effects, &columns);
    Ok(o)
}

/// Clears project-memory facts that named a column which no longer exists.
fn forget_dropped(ctx: &ToolContext<'_>, effects: &mut ToolEffects, dropped: &[String]) {
    for key in ["leakage_candidates", "identifier_candidates", "high_missing_columns"] {
        if let Some(list) = ctx.project.text(key) {
            let rest: Vec<&str> = list.split(',').map(str::trim).filter(|c| !c.is_empty() && !dropped.iter().any(|d| d == c)).collect();
            effects.context_updates.insert(key.into(), CtxValue::Text(rest.join(",")));
        }
    }
}

fn drop_missing_columns(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let threshold = p.f64_or("threshold", DEFAULT_DROP_THRESHOLD)?;
    let exclude = p.str_list("exclude_columns")?;
    let frame = ctx.read_frame(&path)?;
    let m = missingness_of(&frame, threshold);
    let drop: Vec<String> = m.flagged_for_drop.iter().filter(|c| !exclude.contains(c)).cloned().collect();
    let out = frame.drop_columns(&drop)?;
    let narrative = if drop.is_empty() {
        format!("No column has {threshold}% or more missing values; nothing dropped.")
    } else {
        format!("Dropped {} column(s) with {threshold}%+ missing values: {}.", drop.len(), drop.join(", "))
    };
    let mut o = derived_outcome(ctx, &path, "_nan", &out, TransformStep::DropColumns { columns: drop.clone() }, narrative, json!({"dropped": drop, "threshold": threshold}))?;
    forget_dropped(ctx, &mut o.effects, &drop);
    Ok(o)
}

fn drop_rows_missing(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let frame = ctx.read_frame(&path)?;
    let mut columns = p.str_list("columns")?;
    if columns.is_empty() {
        columns = frame.names();
    }
    let cols: Vec<Column> = columns.iter().map(|c| frame.require(c).cloned()).collect::<Result<_, _>>()?;
    let out = frame.filter_rows(|r| cols.iter().all(|c| !c.is_missing(r)));
    let removed = frame.n_rows() - out.n_rows();
    let narrative = format!(
        "Dropped {removed} of {} row(s) with missing values in {}. {} rows remain.",
        frame.n_rows(),
        if columns.len() == frame.n_cols() { "any column".to_string() } else { columns.join(", ") },
        out.n_rows()
    );
    let transform = TransformStep::DropRows { columns: columns.clone(), rows_removed: removed };
    derived_outcome(ctx, &path, "_prepared", &out, transform, narrative, json!({"rows_removed": removed, "rows_remaining": out.n_rows(), "columns": columns}))
}

/// Imputes `frame` in place; returns per-column imputed counts and the fill
/// texts to replay at prediction time.
pub fn impute_frame(
    frame: &mut Frame,
    strategy: ImputeStrategy,
    exclude: &[String],
    seed: u64,
) -> Result<(BTreeMap<String, usize>, BTreeMap<String, String>), ToolError> {
    let mut counts = BTreeMap::new();
    let mut fills = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = frame.names();
    for name in &names {
        if exclude.contains(name) {
            continue;
        }
        let col = frame.column(name).expect("listed").clone();
        let gaps = col.missing_count();
        if gaps == 0 {
            continue;
        }
        if gaps == col.len() {
            return Err(data_err(format!("column `{name}` is entirely missing; drop it before imputing")));
        }
        let numeric = col.dtype().is_numeric();
        let present: Vec<String> = col.present().map(|s| s.trim().to_string()).collect();
        let mode = col.level_counts().first().map(|x| x.0.clone()).expect("present values exist");
        let fill = match strategy {
            ImputeStrategy::Mean | ImputeStrategy::Median if !numeric => {
                return Err(data_err(format!("{strategy:?} imputation needs a numeric column; `{name}` is not numeric (use mode or hotdeck)").to_lowercase()));
            }
            ImputeStrategy::Mean => format_float(stats::mean(&col.numeric_present().expect("numeric")).expect("non-empty")),
            ImputeStrategy::Median => format_float(stats::median(&col.numeric_present().expect("numeric")).expect("non-empty")),
            ImputeStrategy::Mode => mode.clone(),
            ImputeStrategy::Hotdeck => {
                if numeric {
                    format_float(stats::median(&col.numeric_present().expect("numeric")).expect("non-empty"))
                } else {
                    mode.clone()
                }
            }
        };
        let target = frame.column_mut(name).expect("listed");
        for v in target.values.iter_mut() {
            if super::frame::is_missing_token(v) {
                *v = match strategy {
                    ImputeStrategy::Hotdeck => present[rng.random_range(0..present.len())].clone(),
                    _ => fill.clone(),
                };
            }
        }
        counts.insert(name.clone(), gaps);
        fills.insert(name.clone(), fill);
    }
    Ok((counts, fills))
}

fn impute(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let strategy_text = p.opt_str("strategy")?.unwrap_or_else(|| "median".into());
    let strategy = ImputeStrategy::parse(&strategy_text)
        .ok_or_else(|| ToolError::Param { name: "strategy".into(), message: format!("unknown strategy `{strategy_text}`") })?;
    let exclude = p.str_list("exclude_columns")?;
    let seed = p.seed_or(ctx.seed)?;
    let mut frame = ctx.read_frame(&path)?;
    for c in &exclude {
        frame.require(c)?;
    }
    let before = frame.total_missing();
    let (counts, fills) = impute_frame(&mut frame, strategy, &exclude, seed)?;
    let total: usize = counts.values().sum();
    let mut logs = vec![format!("Imputing with strategy {strategy_text}"), "Missing values per column before imputation:".into()];
    for (c, k) in &counts {
        logs.push(format!("{c:<24}{k:>6}"));
    }
    if !exclude.is_empty() {
        logs.push(format!("Excluded from imputation: {}", exclude.join(", ")));
    }
    logs.push("Saving imputed data...".into());
    let narrative = format!("{total} missing values were imputed.");
    let output = json!({"imputed_per_column": counts, "total_imputed": total, "missing_before": before, "missing_after": frame.total_missing(), "excluded": exclude});
    let mut o = derived_outcome(ctx, &path, "_imputed", &frame, TransformStep::Impute { strategy, fills }, narrative, output)?;
    o.report.logs = logs;
    Ok(o)
}

fn encode_categoricals(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let target = p.opt_str("target")?;
    let mut frame = ctx.read_frame(&path)?;
    let mut columns = p.str_list("columns")?;
    if columns.is_empty() {
        columns = frame.columns().iter().filter(|c| c.dtype() == DType::Text && Some(&c.name) != target.as_ref()).map(|c| c.name.clone()).collect();
    }
    if columns.is_empty() {
        let report = ToolReport::success(json!({"encoded": []}), "No text columns to encode; the data is unchanged.");
        return Ok(ToolOutcome { report, effects: ToolEffects::default() });
    }
    let mut steps = Vec::new();
    for name in &columns {
        let src = frame.require(name)?.clone();
        let mut levels: Vec<String> = src.level_counts().into_iter().map(|x| x.0).collect();
        levels.sort_by(|a, b| level_order(a, b));
        let output_columns: Vec<String> = levels.iter().map(|l| one_hot_name(name, l)).collect();
        let unknown = unknown_name(name);
        let cols = encode_with_levels(&src, &levels, &output_columns, &unknown);
        frame.splice_column(name, cols)?;
        steps.push(TransformStep::OneHot { column: name.clone(), levels, output_columns, unknown_column: unknown });
    }
    let narrative = format!(
        "One-hot encoded {} column(s): {} (each with an unknown-level bucket). The frame now has {} columns.",
        columns.len(),
        columns.join(", "),
        frame.n_cols()
    );
    let out_path = derived_name(&path, "_encoded");
    frame.write(&ctx.resolve(&out_path)?)?;
    let mut effects = ToolEffects { derived_dataset: Some(out_path.clone()), ..Default::default() };
    effects.context_updates.insert("dataset_path".into(), CtxValue::Text(out_path.clone()));
    effects.context_updates.insert("n_cols".into(), CtxValue::Number(frame.n_cols() as f64));
    effects.transforms = steps;
    let mut report = ToolReport::success(json!({"encoded": columns}), format!("{narrative}\nThe data has been saved to {out_path}"));
    report.artifacts.push(out_path);
    Ok(ToolOutcome { report, effects })
}

/// Columns whose values are (nearly) all distinct and integer-valued or text.
pub fn identifier_candidates(frame: &Frame, target: Option<&str>) -> Vec<String> {
    let n = frame.n_rows();
    if n == 0 {
        return Vec::new();
    }
    frame
        .columns()
        .iter()
        .filter(|c| Some(c.name.as_str()) != target)
        .filter(|c| {
            let present = n - c.missing_count();
            present > 0 && (c.unique_count() as f64 / n as f64) >= IDENTIFIER_UNIQUE_RATIO && (c.dtype() == DType::Text || c.is_integer_valued())
        })
        .map(|c| c.name.clone())
        .collect()
}

fn identifier_screen(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let target = p.opt_str("target")?;
    let frame = ctx.read_frame(&path)?;
    let found = identifier_candidates(&frame, target.as_deref());
    let mut effects = ToolEffects::default();
    effects.context_updates.insert("identifier_candidates".into(), CtxValue::Text(found.join(",")));
    let narrative = if found.is_empty() {
        "No identifier-like columns were found.".to_string()
    } else {
        effects.findings.push(Finding {
            kind: "identifier_candidate".into(),
            columns: found.clone(),
            message: format!("identifier-like column(s) with nearly all values unique: {}", found.join(", ")),
        });
        format!(
            "Identifier-like columns found (at least {:.0}% unique values): {}. Such columns carry no predictive signal and should be removed before modelling.",
            IDENTIFIER_UNIQUE_RATIO * 100.0,
            found.join(", ")
        )
    };
    Ok(ToolOutcome { report: ToolReport::success(json!({"identifier_candidates": found}), narrative), effects })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Identifier,
    PostBaseline,
    Ok,
}

fn leakage_screen(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let target = p.str("target")?;
    let threshold = p.f64_or("threshold", LEAKAGE_CORRELATION)?;
    let frame = ctx.read_frame(&path)?;
    let t = frame.require(&target)?.numeric().ok_or_else(|| data_err(format!("target `{target}` is not numeric; encode it first")))?;
    let mut scores = Vec::new();
    for c in frame.columns().iter().filter(|c| c.name != target) {
        if let Some(v) = c.numeric() {
            if let Some((r, _)) = stats::spearman_pairwise(&v, &t) {
                scores.push((c.name.clone(), r));
            }
        }
    }
    let mut found: Vec<String> = scores.iter().filter(|(_, r)| r.abs() >= threshold).map(|(c, _)| c.clone()).collect();
    let mut from_metadata = Vec::new();
    if let Some(meta) = p.opt_str("metadata")? {
        let text = std::fs::read_to_string(ctx.resolve(&meta)?)?;
        let roles: BTreeMap<String, ColumnRole> = serde_json::from_str(&text).map_err(|e| data_err(format!("metadata file: {e}")))?;
        for (col, role) in roles {
            if role == ColumnRole::PostBaseline && frame.has_column(&col) && !found.contains(&col) {
                from_metadata.push(col.clone());
                found.push(col);
            }
        }
    }
    let mut effects = ToolEffects::default();
    effects.context_updates.insert("leakage_candidates".into(), CtxValue::Text(found.join(",")));
    let mut out = format!("Absolute Spearman correlation with `{target}`:\n");
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for (c, r) in &sorted {
        let _ = writeln!(out, "{c:<24}{r:>10.4}");
    }
    if found.is_empty() {
        out.push_str("No column looks like post-baseline information.");
    } else {
        let _ = write!(
            out,
            "Potential data leakage: {} (|correlation| >= {threshold} or marked post-baseline). These columns may not be available at prediction time and should be removed.",
            found.join(", ")
        );
        effects.findings.push(Finding { kind: "leakage_candidate".into(), columns: found.clone(), message: format!("possible post-baseline column(s): {}", found.join(", ")) });
    }
    let output = json!({"leakage_candidates": found, "correlations": scores, "from_metadata": from_metadata});
    Ok(ToolOutcome { report: ToolReport::success(output, out), effects })
}

/// Kaplan-Meier estimate: (time, survival) at each event time.
pub fn kaplan_meier_curve(times: &[f64], events: &[bool]) -> Vec<(f64, f64)> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut out = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let t = times[idx[i]];
        let mut d = 0.0;
        let mut c = 0.0;
        while i < idx.len() && times[idx[i]] == t {
            if events[idx[i]] {
                d += 1.0;
            } else {
                c += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
            out.push((t, s));
        }
        at_risk -= d + c;
    }
    out
}

fn kaplan_meier(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let tcol = p.str("time_column")?;
    let ecol = p.str("event_column")?;
    let frame = ctx.read_frame(&path)?;
    let t = frame.require(&tcol)?.numeric().ok_or_else(|| data_err(format!("`{tcol}` is not numeric")))?;
    let e = frame.require(&ecol)?.numeric().ok_or_else(|| data_err(format!("`{ecol}` is not numeric")))?;
    let (times, events): (Vec<f64>, Vec<bool>) = t.iter().zip(&e).filter_map(|(a, b)| Some(((*a)?, (*b)? != 0.0))).unzip();
    let curve = kaplan_meier_curve(&times, &events);
    let fig = format!("figures/{}_kaplan_meier.svg", file_stem(&path));
    ctx.write_text(&fig, &svg::step_curve("Kaplan-Meier survival estimate", &curve))?;
    let median = curve.iter().find(|(_, s)| *s <= 0.5).map(|x| x.0);
    let narrative = format!(
        "Kaplan-Meier curve over {} subjects with {} events. Median survival time: {}.",
        times.len(),
        events.iter().filter(|x| **x).count(),
        median.map_or("not reached".to_string(), |m| format!("{m}"))
    );
    let mut report = ToolReport::success(json!({"curve": curve, "median_survival": median}), narrative);
    report.artifacts.push(fig);
    Ok(ToolOutcome { report, effects: ToolEffects::default() })
}

/// Shuffles a copy with a seeded generator.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_match_log_formats() {
        assert_eq!(median_iqr_summary(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), "3.0 (2.0 - 4.0)");
        assert_eq!(count_summary(632, 1200), "632/1200 (52.7)");
        assert_eq!(count_summary(2, 4), "2/4 (50.0)");
    }

    #[test]
    fn km_simple() {
        let c = kaplan_meier_curve(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, true]);
        assert_eq!(c.len(), 3);
        assert!((c[0].1 - 0.75).abs() < 1e-12);
        assert!((c[1].1 - 0.375).abs() < 1e-12);
        assert_eq!(c[2].1, 0.0);
    }

    #[test]
    fn integer_low_cardinality_is_categorical() {
        let vals: Vec<String> = (0..100).map(|i| (i % 3).to_string()).collect();
        let c = Column::new("g", vals);
        assert!(is_categorical_candidate(&c, 100));
        let ids: Vec<String> = (0..100).map(|i| i.to_string()).collect();
        assert!(!is_categorical_candidate(&Column::new("id", ids), 100));
    }
}
