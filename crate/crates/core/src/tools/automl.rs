//! Reference model search: a fixed candidate set scored by seeded k-fold
//! cross-validation, refit of the winner, and forest-based feature ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde_json::{json, Value};

use super::data::seeded_permutation;
use super::frame::{format_float, level_order, Frame};
use super::models::{
    auroc_macro, fit_forest, fit_logistic, fit_ridge, fit_tree, r2, CandidateResult, FittedModel, ModelArtifact, PipelineDescription,
    ProblemType, TreeParams, TreeTask, MODEL_FORMAT,
};
use super::{
    data_err, derived_name, stats, CtxValue, ModelSummary, ParamSpec, ParamType, Params, Tool, ToolCategory, ToolContext,
    ToolDescriptor, ToolEffects, ToolError, ToolOutcome, ToolReport, TransformStep,
};
use crate::reasoning::EpisodeCategory as E;

pub const DEFAULT_CV_FOLDS: usize = 5;
pub const RIDGE_GRID: [f64; 4] = [0.0, 0.1, 1.0, 10.0];
pub const TREE_DEPTHS: [usize; 3] = [3, 5, 8];
pub const FOREST_TREES: usize = 50;
const FOREST_DEPTH: usize = 8;

thread_local! {
    static FIT_CALLS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of model fits performed on this thread so far.
pub fn fit_calls() -> u64 {
    FIT_CALLS.with(|c| c.get())
}

fn count_fit() {
    FIT_CALLS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Baseline,
    Ridge(f64),
    Tree(usize),
    Forest(usize),
}

impl Candidate {
    pub fn all() -> Vec<Candidate> {
        let mut v = vec![Candidate::Baseline];
        v.extend(RIDGE_GRID.iter().map(|l| Candidate::Ridge(*l)));
        v.extend(TREE_DEPTHS.iter().map(|d| Candidate::Tree(*d)));
        v.push(Candidate::Forest(FOREST_TREES));
        v
    }

    pub fn name(&self, pt: ProblemType) -> String {
        match (self, pt) {
            (Candidate::Baseline, ProblemType::Classification) => "class_prior".into(),
            (Candidate::Baseline, _) => "mean_baseline".into(),
            (Candidate::Ridge(l), ProblemType::Classification) => format!("logistic(lambda={l})"),
            (Candidate::Ridge(l), _) => format!("ridge(lambda={l})"),
            (Candidate::Tree(d), _) => format!("tree(depth={d})"),
            (Candidate::Forest(n), _) => format!("forest(trees={n})"),
        }
    }

    pub fn family(&self, pt: ProblemType) -> &'static str {
        match (self, pt) {
            (Candidate::Baseline, _) => "baseline",
            (Candidate::Ridge(_), ProblemType::Classification) => "logistic",
            (Candidate::Ridge(_), _) => "linear",
            (Candidate::Tree(_), _) => "tree",
            (Candidate::Forest(_), _) => "forest",
        }
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        match self {
            Candidate::Baseline => {}
            Candidate::Ridge(l) => {
                m.insert("lambda".into(), json!(l));
            }
            Candidate::Tree(d) => {
                m.insert("max_depth".into(), json!(d));
                m.insert("min_leaf".into(), json!(1));
            }
            Candidate::Forest(n) => {
                m.insert("n_trees".into(), json!(n));
                m.insert("max_depth".into(), json!(FOREST_DEPTH));
                m.insert("min_leaf".into(), json!(2));
            }
        }
        m
    }
}

/// Training data in model-ready form. Classification targets are class
/// indices stored as floats.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub problem_type: ProblemType,
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl StudyData {
    pub fn task(&self) -> TreeTask {
        match self.problem_type {
            ProblemType::Classification => TreeTask::Classification(self.classes.len()),
            _ => TreeTask::Regression,
        }
    }

    fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.y[i] as usize).collect()
    }
}

/// Validates the frame and builds the design matrix.
pub fn prepare(frame: &Frame, target: &str, problem_type: ProblemType, exclude: &[String]) -> Result<StudyData, ToolError> {
    let tcol = frame.require(target)?;
    if tcol.missing_count() > 0 {
        return Err(data_err(format!("target `{target}` has {} missing value(s); resolve them with the user first", tcol.missing_count())));
    }
    let feature_names: Vec<String> = frame.names().into_iter().filter(|n| n != target && !exclude.contains(n)).collect();
    if feature_names.is_empty() {
        return Err(data_err("no feature columns remain"));
    }
    let gaps: Vec<String> = feature_names.iter().filter(|n| frame.column(n).is_some_and(|c| c.missing_count() > 0)).cloned().collect();
    if !gaps.is_empty() {
        return Err(data_err(format!("missing values present in {}; run the missing-data handling subtasks first", gaps.join(", "))));
    }
    let text: Vec<String> = feature_names.iter().filter(|n| frame.column(n).is_some_and(|c| !c.dtype().is_numeric())).cloned().collect();
    if !text.is_empty() {
        return Err(data_err(format!(
            "non-numeric feature column(s) {}; encode them with encode_categoricals as a data-engineering step first",
            text.join(", ")
        )));
    }
    let x = frame.numeric_matrix(&feature_names).map_err(ToolError::Data)?;
    let (y, classes) = match problem_type {
        ProblemType::Survival => return Err(data_err("survival analysis is unsupported in reference build")),
        ProblemType::Regression => {
            let y = tcol.numeric_present().ok_or_else(|| data_err(format!("problem type regression does not match the non-numeric target `{target}`")))?;
            if y.len() != frame.n_rows() {
                return Err(data_err(format!("target `{target}` is not numeric")));
            }
            if y.iter().all(|v| *v == y[0]) {
                return Err(data_err("degenerate target: the target column is constant"));
            }
            (y, Vec::new())
        }
        ProblemType::Classification => {
            let mut classes: Vec<String> = tcol.level_counts().into_iter().map(|x| x.0).collect();
            classes.sort_by(|a, b| level_order(a, b));
            if classes.len() < 2 {
                return Err(data_err("degenerate target: the target column is constant"));
            }
            if classes.len() > 20 && tcol.dtype().is_numeric() {
                return Err(data_err(format!(
                    "problem type classification does not match target `{target}` with {} distinct numeric values",
                    classes.len()
                )));
            }
            let y = tcol.values.iter().map(|v| classes.iter().position(|c| c == v.trim()).expect("level listed") as f64).collect();
            (y, classes)
        }
    };
    Ok(StudyData { problem_type, feature_names, classes, x, y })
}

/// Seeded fold assignment. Classification folds are stratified by dealing
/// each class's shuffled rows round-robin.
pub fn fold_assignment(data: &StudyData, k: usize, seed: u64) -> Vec<usize> {
    let n = data.y.len();
    let perm = seeded_permutation(n, seed);
    let mut folds = vec![0; n];
    match data.problem_type {
        ProblemType::Classification => {
            let mut next = 0;
            for c in 0..data.classes.len() {
                for &i in perm.iter().filter(|&&i| data.y[i] as usize == c) {
                    folds[i] = next % k;
                    next += 1;
                }
            }
        }
        _ => {
            for (pos, &i) in perm.iter().enumerate() {
                folds[i] = pos % k;
            }
        }
    }
    folds
}

fn subset(data: &StudyData, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    (idx.iter().map(|&i| data.x[i].clone()).collect(), idx.iter().map(|&i| data.y[i]).collect())
}

pub fn fit_candidate(c: &Candidate, data: &StudyData, idx: &[usize], seed: u64) -> FittedModel {
    count_fit();
    let (x, y) = subset(data, idx);
    let k = data.classes.len();
    match (c, data.problem_type) {
        (Candidate::Baseline, ProblemType::Classification) => {
            let mut probs = vec![0.0; k];
            for v in &y {
                probs[*v as usize] += 1.0;
            }
            FittedModel::ClassPrior { probs: probs.iter().map(|p| p / y.len() as f64).collect() }
        }
        (Candidate::Baseline, _) => FittedModel::Constant { value: y.iter().sum::<f64>() / y.len() as f64 },
        (Candidate::Ridge(l), ProblemType::Classification) => {
            let yy: Vec<usize> = y.iter().map(|v| *v as usize).collect();
            fit_logistic(&x, &yy, k, *l)
        }
        (Candidate::Ridge(l), _) => fit_ridge(&x, &y, *l),
        (Candidate::Tree(d), _) => {
            let all: Vec<usize> = (0..x.len()).collect();
            let params = TreeParams { max_depth: *d, min_leaf: 1, max_features: None };
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            FittedModel::Tree { tree: fit_tree(&x, &y, &all, data.task(), params, &mut rng) }
        }
        (Candidate::Forest(n), _) => fit_forest(&x, &y, data.task(), *n, FOREST_DEPTH, seed),
    }
}

/// Out-of-fold output for one row: a value or class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum OofPrediction {
    Value(f64),
    Probs(Vec<f64>),
}

/// Score of one fold's predictions.
pub fn fold_score(data: &StudyData, idx: &[usize], preds: &[OofPrediction]) -> f64 {
    match data.problem_type {
        ProblemType::Classification => {
            let probs: Vec<Vec<f64>> = preds
                .iter()
                .map(|p| match p {
                    OofPrediction::Probs(v) => v.clone(),
                    OofPrediction::Value(v) => vec![1.0 - v, *v],
                })
                .collect();
            auroc_macro(&probs, &data.labels(idx), data.classes.len())
        }
        _ => {
            let p: Vec<f64> = preds.iter().map(|p| if let OofPrediction::Value(v) = p { *v } else { f64::NAN }).collect();
            let t: Vec<f64> = idx.iter().map(|&i| data.y[i]).collect();
            r2(&p, &t)
        }
    }
}

pub fn predict_one(model: &FittedModel, data: &StudyData, row: &[f64]) -> OofPrediction {
    match data.problem_type {
        ProblemType::Classification => OofPrediction::Probs(model.predict_proba(row, data.classes.len())),
        _ => OofPrediction::Value(model.predict_value(row)),
    }
}

pub struct CvResult {
    pub fold_scores: Vec<f64>,
    pub oof: Vec<OofPrediction>,
}

pub fn cross_validate(c: &Candidate, data: &StudyData, folds: &[usize], k: usize, seed: u64) -> CvResult {
    let n = data.y.len();
    let mut oof = vec![OofPrediction::Value(f64::NAN); n];
    let mut fold_scores = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|i| folds[*i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| folds[*i] == f).collect();
        let model = fit_candidate(c, data, &train, seed.wrapping_add(1 + f as u64));
        let preds: Vec<OofPrediction> = test.iter().map(|&i| predict_one(&model, data, &data.x[i])).collect();
        fold_scores.push(fold_score(data, &test, &preds));
        for (i, p) in test.iter().zip(preds) {
            oof[*i] = p;
        }
    }
    CvResult { fold_scores, oof }
}

/// Arithmetic mean of fold scores, the reported CV score.
pub fn mean_score(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Out-of-fold prediction table: row, fold, target, then one prediction
/// column (regression) or one probability column per class.
pub fn oof_csv(data: &StudyData, folds: &[usize], oof: &[OofPrediction]) -> String {
    let mut s = String::from("row,fold,target");
    match data.problem_type {
        ProblemType::Classification => {
            for i in 0..data.classes.len() {
                let _ = write!(s, ",prob_{i}");
            }
        }
        _ => s.push_str(",prediction"),
    }
    s.push('\n');
    for (i, p) in oof.iter().enumerate() {
        let _ = write!(s, "{i},{},{}", folds[i], format_float(data.y[i]));
        match p {
            OofPrediction::Value(v) => {
                let _ = write!(s, ",{}", format_float(*v));
            }
            OofPrediction::Probs(v) => {
                for x in v {
                    let _ = write!(s, ",{}", format_float(*x));
                }
            }
        }
        s.push('\n');
    }
    s
}

/// Recomputes per-fold scores from an out-of-fold table written by `oof_csv`.
pub fn scores_from_oof(csv_text: &str, problem_type: ProblemType, n_classes: usize, k: usize) -> Result<Vec<f64>, String> {
    let frame = Frame::parse(csv_text).map_err(|e| e.to_string())?;
    let fold = frame.require("fold").map_err(|e| e.to_string())?.numeric().ok_or("bad fold column")?;
    let target = frame.require("target").map_err(|e| e.to_string())?.numeric().ok_or("bad target column")?;
    let mut out = Vec::new();
    for f in 0..k {
        let idx: Vec<usize> = (0..frame.n_rows()).filter(|i| fold[*i] == Some(f as f64)).collect();
        let t: Vec<f64> = idx.iter().map(|&i| target[i].unwrap_or(f64::NAN)).collect();
        match problem_type {
            ProblemType::Classification => {
                let cols: Vec<Vec<Option<f64>>> = (0..n_classes)
                    .map(|c| frame.require(&format!("prob_{c}")).map_err(|e| e.to_string())?.numeric().ok_or_else(|| "bad probability column".to_string()))
                    .collect::<Result<_, _>>()?;
                let probs: Vec<Vec<f64>> = idx.iter().map(|&i| cols.iter().map(|c| c[i].unwrap_or(f64::NAN)).collect()).collect();
                let y: Vec<usize> = t.iter().map(|v| *v as usize).collect();
                out.push(auroc_macro(&probs, &y, n_classes));
            }
            _ => {
                let pc = frame.require("prediction").map_err(|e| e.to_string())?.numeric().ok_or("bad prediction column")?;
                let p: Vec<f64> = idx.iter().map(|&i| pc[i].unwrap_or(f64::NAN)).collect();
                out.push(r2(&p, &t));
            }
        }
    }
    Ok(out)
}

pub struct StudyResult {
    pub artifact: ModelArtifact,
    pub folds: Vec<usize>,
    pub oof: Vec<OofPrediction>,
    pub data: StudyData,
}

/// Scores every candidate, refits the best on all rows and returns the
/// artifact (not yet saved).
pub fn run_study(
    frame: &Frame,
    target: &str,
    problem_type: ProblemType,
    k: usize,
    seed: u64,
    exclude: &[String],
    recipe: &[TransformStep],
) -> Result<StudyResult, ToolError> {
    if k < 2 {
        return Err(ToolError::Param { name: "cv_folds".into(), message: "at least 2 folds are needed".into() });
    }
    if problem_type == ProblemType::Survival {
        return Err(data_err("survival analysis is unsupported in reference build"));
    }
    if frame.n_rows() < 10 * k {
        return Err(data_err(format!("{} rows are too few for {k}-fold cross-validation (need at least {})", frame.n_rows(), 10 * k)));
    }
    let data = prepare(frame, target, problem_type, exclude)?;
    let folds = fold_assignment(&data, k, seed);
    let mut candidates = Vec::new();
    let mut best: Option<(usize, f64, CvResult)> = None;
    for (ci, c) in Candidate::all().into_iter().enumerate() {
        let cv = cross_validate(&c, &data, &folds, k, seed.wrapping_mul(31).wrapping_add(ci as u64 * 1000));
        let mean = mean_score(&cv.fold_scores);
        let sd = stats::sample_sd(&cv.fold_scores).unwrap_or(0.0);
        candidates.push(CandidateResult {
            name: c.name(problem_type),
            family: c.family(problem_type).into(),
            hyperparameters: c.hyperparameters(),
            fold_scores: cv.fold_scores.clone(),
            mean,
            sd,
        });
        if mean.is_finite() && best.as_ref().is_none_or(|(_, m, _)| mean > *m) {
            best = Some((ci, mean, cv));
        }
    }
    let (bi, best_mean, cv) = best.ok_or_else(|| data_err("no candidate produced a finite score"))?;
    let cand = &Candidate::all()[bi];
    let all: Vec<usize> = (0..data.y.len()).collect();
    let fitted = fit_candidate(cand, &data, &all, seed.wrapping_add(7919));
    let artifact = ModelArtifact {
        format: MODEL_FORMAT.into(),
        problem_type,
        target: target.into(),
        feature_names: data.feature_names.clone(),
        classes: data.classes.clone(),
        pipeline: PipelineDescription { preprocessing: recipe.to_vec(), family: cand.family(problem_type).into(), hyperparameters: cand.hyperparameters() },
        fitted,
        metric: metric_name(problem_type).into(),
        cv_folds: k,
        cv_fold_scores: cv.fold_scores.clone(),
        cv_score: best_mean,
        seed,
        candidates,
        cv_predictions: None,
        training_rows: data.y.len(),
    };
    Ok(StudyResult { artifact, folds, oof: cv.oof, data })
}

pub fn metric_name(pt: ProblemType) -> &'static str {
    match pt {
        ProblemType::Classification => "auroc",
        _ => "r2",
    }
}

fn problem_type_param(p: &Params<'_>) -> Result<ProblemType, ToolError> {
    let s = p.str("problem_type")?;
    ProblemType::parse(&s).ok_or_else(|| ToolError::Param { name: "problem_type".into(), message: format!("unknown problem type `{s}`") })
}

fn automl_study(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let target = p.str("target")?;
    let pt = problem_type_param(p)?;
    let k = p.usize_or("cv_folds", DEFAULT_CV_FOLDS)?;
    let seed = p.seed_or(ctx.seed)?;
    let exclude = p.str_list("exclude_columns")?;
    if pt == ProblemType::Survival {
        let has_te = ctx.project.text("time_column").is_some() && ctx.project.text("event_column").is_some();
        if !has_te {
            return Err(data_err("survival analysis needs time and event columns; none are recorded"));
        }
        return Err(data_err("survival analysis is unsupported in reference build"));
    }
    let frame = ctx.read_frame(&path)?;
    let mut study = run_study(&frame, &target, pt, k, seed, &exclude, ctx.recipe)?;
    let model_rel = std::path::Path::new(&derived_name(&path, ".model")).with_extension("json").to_string_lossy().into_owned();
    let oof_rel = derived_name(&path, "_cv_predictions");
    ctx.write_text(&oof_rel, &oof_csv(&study.data, &study.folds, &study.oof))?;
    study.artifact.cv_predictions = Some(oof_rel.clone());
    let model_path = ctx.resolve(&model_rel)?;
    study.artifact.save(&model_path)?;
    let a = &study.artifact;

    let mut s = format!("Model search ({} candidates, {k}-fold cross-validation, metric {}):\n", a.candidates.len(), a.metric);
    let _ = writeln!(s, "{:<24}{:>10}{:>10}", "candidate", "mean", "sd");
    for c in &a.candidates {
        let _ = writeln!(s, "{:<24}{:>10.4}{:>10.4}", c.name, c.mean, c.sd);
    }
    let best = a.candidates.iter().find(|c| c.fold_scores == a.cv_fold_scores && c.family == a.pipeline.family).map(|c| c.name.clone()).unwrap_or_default();
    let _ = writeln!(s, "Selected {best} with mean {} {:.4}; fold scores: {}.", a.metric, a.cv_score, a.cv_fold_scores.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "));
    let _ = write!(s, "The model was refit on all {} rows and saved to {model_rel}; out-of-fold predictions are in {oof_rel}.", a.training_rows);

    let output = json!({
        "selected": best,
        "metric": a.metric,
        "cv_score": a.cv_score,
        "cv_fold_scores": a.cv_fold_scores,
        "candidates": a.candidates,
        "model_path": model_rel,
        "cv_predictions": oof_rel,
        "feature_names": a.feature_names,
    });
    let mut report = ToolReport::success(output, s);
    report.artifacts = vec![model_rel.clone(), oof_rel];
    let mut effects = ToolEffects::default();
    effects.context_updates.insert("model_path".into(), CtxValue::Text(model_rel.clone()));
    effects.context_updates.insert("cv_folds".into(), CtxValue::Number(k as f64));
    effects.model = Some(ModelSummary {
        path: model_rel,
        problem_type: pt.as_str().into(),
        family: a.pipeline.family.clone(),
        metric: a.metric.clone(),
        cv_score: a.cv_score,
        cv_fold_scores: a.cv_fold_scores.clone(),
    });
    Ok(ToolOutcome { report, effects })
}

/// Ranks features by permutation importance of a seeded forest.
pub fn rank_features(data: &StudyData, seed: u64) -> Vec<(String, f64)> {
    let all: Vec<usize> = (0..data.y.len()).collect();
    let model = fit_candidate(&Candidate::Forest(30), data, &all, seed);
    let score = |x: &[Vec<f64>]| {
        let preds: Vec<OofPrediction> = x.iter().map(|r| predict_one(&model, data, r)).collect();
        fold_score(data, &all, &preds)
    };
    let base = score(&data.x);
    let mut ranked: Vec<(String, f64)> = data
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let perm = seeded_permutation(data.x.len(), seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(j as u64 + 1)));
            let mut x = data.x.clone();
            for (i, &src) in perm.iter().enumerate() {
                x[i][j] = data.x[src][j];
            }
            (name.clone(), base - score(&x))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn feature_selection(ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    let path = p.str("dataset")?;
    let target = p.str("target")?;
    let pt = problem_type_param(p)?;
    let seed = p.seed_or(ctx.seed)?;
    let apply = p.bool_or("apply", false)?;
    let exclude = p.str_list("exclude_columns")?;
    if pt == ProblemType::Survival {
        return Err(data_err("feature selection for survival analysis is unsupported in reference build"));
    }
    let frame = ctx.read_frame(&path)?;
    let data = prepare(&frame, &target, pt, &exclude)?;
    let k = p.usize_or("k", data.feature_names.len())?;
    if k == 0 {
        return Err(ToolError::Param { name: "k".into(), message: "must be at least 1".into() });
    }
    if k > data.feature_names.len() {
        return Err(ToolError::Param { name: "k".into(), message: format!("exceeds the {} available features", data.feature_names.len()) });
    }
    let ranked = rank_features(&data, seed);
    let top: Vec<String> = ranked.iter().take(k).map(|r| r.0.clone()).collect();
    let mut s = String::from("Feature ranking (permutation importance of a seeded tree ensemble):\n");
    for (i, (n, v)) in ranked.iter().enumerate() {
        let _ = writeln!(s, "{:>3}. {n:<24}{v:>12.6}", i + 1);
    }
    let _ = write!(s, "Top {k}: {}.", top.join(", "));
    let output = json!({"ranking": ranked.iter().map(|(n, v)| json!({"feature": n, "score": v})).collect::<Vec<_>>(), "selected": top});
    let mut effects = ToolEffects::default();
    effects.context_updates.insert("selected_features".into(), CtxValue::Text(top.join(",")));
    let mut report = ToolReport::success(output, s);
    if apply && k < data.feature_names.len() {
        let drop: Vec<String> = data.feature_names.iter().filter(|f| !top.contains(f)).cloned().collect();
        let out = frame.drop_columns(&drop)?;
        let out_rel = derived_name(&path, "_selected");
        out.write(&ctx.resolve(&out_rel)?)?;
        report.narrative.push_str(&format!("\nDropped {} unselected feature(s). The data has been saved to {out_rel}", drop.len()));
        report.artifacts.push(out_rel.clone());
        effects.derived_dataset = Some(out_rel.clone());
        effects.transforms.push(TransformStep::DropColumns { columns: drop });
        effects.context_updates.insert("dataset_path".into(), CtxValue::Text(out_rel));
        effects.context_updates.insert("n_cols".into(), CtxValue::Number(out.n_cols() as f64));
    }
    Ok(ToolOutcome { report, effects })
}

fn survival_stub(_ctx: &ToolContext<'_>, _p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
    Err(data_err("survival analysis is unsupported in reference build"))
}

struct FnTool(fn(&ToolContext<'_>, &Params<'_>) -> Result<ToolOutcome, ToolError>);

impl Tool for FnTool {
    fn run(&self, ctx: &ToolContext<'_>, p: &Params<'_>) -> Result<ToolOutcome, ToolError> {
        (self.0)(ctx, p)
    }
}

fn common_params() -> Vec<ParamSpec> {
    vec![
        ParamSpec::required("dataset", ParamType::String, "Dataset file relative to the working directory.").from_context("dataset_path"),
        ParamSpec::required("target", ParamType::String, "Target column.").from_context("target_column"),
        ParamSpec::required("problem_type", ParamType::String, "classification, regression or survival.").from_context("problem_type"),
        ParamSpec::optional("exclude_columns", ParamType::StringList, "Columns left out of the features."),
        ParamSpec::optional("seed", ParamType::Integer, "Random seed."),
    ]
}

pub fn native_tools() -> Vec<(ToolDescriptor, Arc<dyn Tool>)> {
    let mut automl_params = common_params();
    automl_params.push(
        ParamSpec::optional("cv_folds", ParamType::Integer, "Number of cross-validation folds.").from_context("cv_folds").with_default(json!(DEFAULT_CV_FOLDS)),
    );
    let mut fs_params = common_params();
    fs_params.push(ParamSpec::optional("k", ParamType::Integer, "Number of features to keep (default: all, ranked)."));
    fs_params.push(ParamSpec::optional("apply", ParamType::Bool, "Write a dataset restricted to the top k features.").with_default(json!(false)));
    vec![
        (
            ToolDescriptor {
                name: "automl_study".into(),
                doc: "Scores a fixed candidate set (baseline, ridge or logistic over a penalty grid, decision trees, a tree ensemble) by seeded k-fold cross-validation, refits the best on all rows and saves it with its preprocessing recipe.".into(),
                category: ToolCategory::ModelBuilding,
                applicable_stages: vec![E::ModelBuilding],
                param_schema: automl_params,
                deterministic_given_seed: true,
            },
            Arc::new(FnTool(automl_study)),
        ),
        (
            ToolDescriptor {
                name: "feature_selection".into(),
                doc: "Ranks numeric features by permutation importance of a seeded tree ensemble and optionally keeps the top k.".into(),
                category: ToolCategory::DataCentric,
                applicable_stages: vec![E::DataEngineering],
                param_schema: fs_params,
                deterministic_given_seed: true,
            },
            Arc::new(FnTool(feature_selection)),
        ),
        (
            ToolDescriptor {
                name: "survival_study".into(),
                doc: "Survival model search slot. Not available in this build.".into(),
                category: ToolCategory::ModelBuilding,
                applicable_stages: vec![E::ModelBuilding],
                param_schema: common_params(),
                deterministic_given_seed: true,
            },
            Arc::new(FnTool(survival_stub)),
        ),
    ]
}
