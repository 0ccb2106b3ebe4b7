//! Model families for the reference model search, their fitted forms and the
//! saved model file format.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::frame::Frame;
use super::transform::TransformStep;

pub const MODEL_FORMAT: &str = "climb-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Classification,
    Regression,
    Survival,
}

impl ProblemType {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classification" => Some(Self::Classification),
            "regression" => Some(Self::Regression),
            "survival" | "survival analysis" => Some(Self::Survival),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Classification => "classification",
            Self::Regression => "regression",
            Self::Survival => "survival",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut means = vec![0.0; p];
        for row in x {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut scales = vec![0.0; p];
        for row in x {
            for j in 0..p {
                scales[j] += (row[j] - means[j]).powi(2);
            }
        }
        let scales = scales.into_iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Standardizer { means, scales }
    }

    pub fn identity(p: usize) -> Self {
        Standardizer { means: vec![0.0; p], scales: vec![1.0; p] }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Mean target (regression) or class probabilities (classification).
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            d(self, 0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    /// Training-mean predictor.
    Constant { value: f64 },
    /// Class-frequency predictor.
    ClassPrior { probs: Vec<f64> },
    /// Prediction = intercept + coefs . standardized(x).
    Linear { standardizer: Standardizer, intercept: f64, coefs: Vec<f64> },
    /// One-vs-rest logistic models; a single model scores class 1 when there
    /// are two classes.
    Logistic { standardizer: Standardizer, intercepts: Vec<f64>, coefs: Vec<Vec<f64>> },
    Tree { tree: Tree },
    Forest { trees: Vec<Tree> },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl FittedModel {
    pub fn family(&self) -> &'static str {
        match self {
            FittedModel::Constant { .. } | FittedModel::ClassPrior { .. } => "baseline",
            FittedModel::Linear { .. } => "linear",
            FittedModel::Logistic { .. } => "logistic",
            FittedModel::Tree { .. } => "tree",
            FittedModel::Forest { .. } => "forest",
        }
    }

    /// Regression predictions, or the first output for other models.
    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Constant { value } => *value,
            FittedModel::Linear { standardizer, intercept, coefs } => {
                intercept + standardizer.apply_row(row).iter().zip(coefs).map(|(a, b)| a * b).sum::<f64>()
            }
            FittedModel::Tree { tree } => tree.leaf_value(row)[0],
            FittedModel::Forest { trees } => trees.iter().map(|t| t.leaf_value(row)[0]).sum::<f64>() / trees.len() as f64,
            other => other.predict_proba(row, 2).get(1).copied().unwrap_or(0.0),
        }
    }

    /// Class probabilities for `k` classes.
    pub fn predict_proba(&self, row: &[f64], k: usize) -> Vec<f64> {
        match self {
            FittedModel::ClassPrior { probs } => probs.clone(),
            FittedModel::Logistic { standardizer, intercepts, coefs } => {
                let z = standardizer.apply_row(row);
                let scores: Vec<f64> =
                    intercepts.iter().zip(coefs).map(|(b, w)| sigmoid(b + z.iter().zip(w).map(|(a, c)| a * c).sum::<f64>())).collect();
                if scores.len() == 1 {
                    vec![1.0 - scores[0], scores[0]]
                } else {
                    let s: f64 = scores.iter().sum();
                    if s > 0.0 {
                        scores.iter().map(|v| v / s).collect()
                    } else {
                        vec![1.0 / k as f64; k]
                    }
                }
            }
            FittedModel::Tree { tree } => tree.leaf_value(row).to_vec(),
            FittedModel::Forest { trees } => {
                let mut acc = vec![0.0; k];
                for t in trees {
                    for (a, v) in acc.iter_mut().zip(t.leaf_value(row)) {
                        *a += v;
                    }
                }
                acc.iter().map(|a| a / trees.len() as f64).collect()
            }
            FittedModel::Constant { value } => {
                let mut v = vec![0.0; k];
                if let Some(slot) = v.get_mut(value.round().max(0.0) as usize) {
                    *slot = 1.0;
                }
                v
            }
            FittedModel::Linear { .. } => {
                let p1 = self.predict_value(row).clamp(0.0, 1.0);
                vec![1.0 - p1, p1]
            }
        }
    }
}

/// Ridge least squares on standardized features with an unpenalized
/// intercept, solved through the SVD so collinear columns are handled.
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> FittedModel {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let st = Standardizer::fit(x);
    let ybar = y.iter().sum::<f64>() / n.max(1) as f64;
    if p == 0 || n == 0 {
        return FittedModel::Linear { standardizer: st, intercept: ybar, coefs: vec![0.0; p] };
    }
    let z = DMatrix::from_fn(n, p, |i, j| (x[i][j] - st.means[j]) / st.scales[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let svd = z.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-10 * (n.max(p) as f64);
    let uty = u.transpose() * &yc;
    let mut w = DVector::zeros(svd.singular_values.len());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            w[i] = s / (s * s + lambda) * uty[i];
        }
    }
    let beta = vt.transpose() * w;
    FittedModel::Linear { standardizer: st, intercept: ybar, coefs: beta.iter().copied().collect() }
}

/// Penalized logistic regression by Newton iterations. `y` holds 0/1.
fn fit_logistic_binary(z: &DMatrix<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let (n, p) = z.shape();
    let mut xa = DMatrix::from_element(n, p + 1, 1.0);
    xa.view_mut((0, 1), (n, p)).copy_from(z);
    let mut beta = DVector::zeros(p + 1);
    // A small floor keeps separable data from diverging.
    let penalty = lambda.max(1e-4);
    for _ in 0..50 {
        let eta = &xa * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| sigmoid(*e)).collect();
        let mut grad = DVector::zeros(p + 1);
        let mut hess = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let r = mu[i] - y[i];
            let w = (mu[i] * (1.0 - mu[i])).max(1e-10);
            let row = xa.row(i);
            for a in 0..=p {
                grad[a] += r * row[a];
                for b in 0..=p {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 1..=p {
            grad[a] += penalty * beta[a];
            hess[(a, a)] += penalty;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hess.pseudo_inverse(1e-12) {
                Ok(inv) => inv * &grad,
                Err(_) => break,
            },
        };
        beta -= &step;
        if step.amax() < 1e-9 {
            break;
        }
    }
    (beta[0], beta.iter().skip(1).copied().collect())
}

pub fn fit_logistic(x: &[Vec<f64>], y: &[usize], k: usize, lambda: f64) -> FittedModel {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let st = Standardizer::fit(x);
    let z = DMatrix::from_fn(n, p, |i, j| (x[i][j] - st.means[j]) / st.scales[j]);
    let classes: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
    let mut intercepts = Vec::new();
    let mut coefs = Vec::new();
    for c in classes {
        let yy: Vec<f64> = y.iter().map(|v| if *v == c { 1.0 } else { 0.0 }).collect();
        let (b, w) = fit_logistic_binary(&z, &yy, lambda);
        intercepts.push(b);
        coefs.push(w);
    }
    FittedModel::Logistic { standardizer: st, intercepts, coefs }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeTask {
    Regression,
    Classification(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `None` means all.
    pub max_features: Option<usize>,
}

fn leaf_value(task: TreeTask, y: &[f64], idx: &[usize]) -> Vec<f64> {
    match task {
        TreeTask::Regression => vec![idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64],
        TreeTask::Classification(k) => {
            let mut c = vec![0.0; k];
            for &i in idx {
                c[y[i] as usize] += 1.0;
            }
            c.iter().map(|v| v / idx.len() as f64).collect()
        }
    }
}

/// Best split of `idx` on `feature`: (gain, threshold).
fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], feature: usize, task: TreeTask, min_leaf: usize) -> Option<(f64, f64)> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|a, b| x[*a][feature].total_cmp(&x[*b][feature]).then(a.cmp(b)));
    let n = order.len();
    let mut best: Option<(f64, f64)> = None;
    match task {
        TreeTask::Regression => {
            let total: f64 = order.iter().map(|&i| y[i]).sum();
            let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
            let parent = total_sq - total * total / n as f64;
            let (mut ls, mut lsq) = (0.0, 0.0);
            for s in 1..n {
                let v = y[order[s - 1]];
                ls += v;
                lsq += v * v;
                let (a, b) = (x[order[s - 1]][feature], x[order[s]][feature]);
                if a == b || s < min_leaf || n - s < min_leaf {
                    continue;
                }
                let rs = total - ls;
                let rsq = total_sq - lsq;
                let sse = (lsq - ls * ls / s as f64) + (rsq - rs * rs / (n - s) as f64);
                let gain = parent - sse;
                if best.is_none_or(|(g, _)| gain > g + 1e-12) {
                    best = Some((gain, a + (b - a) / 2.0));
                }
            }
        }
        TreeTask::Classification(k) => {
            let mut total = vec![0.0; k];
            for &i in &order {
                total[y[i] as usize] += 1.0;
            }
            let gini = |c: &[f64], m: f64| if m == 0.0 { 0.0 } else { m * (1.0 - c.iter().map(|v| (v / m) * (v / m)).sum::<f64>()) };
            let parent = gini(&total, n as f64);
            let mut left = vec![0.0; k];
            for s in 1..n {
                left[y[order[s - 1]] as usize] += 1.0;
                let (a, b) = (x[order[s - 1]][feature], x[order[s]][feature]);
                if a == b || s < min_leaf || n - s < min_leaf {
                    continue;
                }
                let right: Vec<f64> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let gain = parent - gini(&left, s as f64) - gini(&right, (n - s) as f64);
                if best.is_none_or(|(g, _)| gain > g + 1e-12) {
                    best = Some((gain, a + (b - a) / 2.0));
                }
            }
        }
    }
    best.filter(|(g, _)| *g > 1e-12)
}

pub fn fit_tree(x: &[Vec<f64>], y: &[f64], idx: &[usize], task: TreeTask, params: TreeParams, rng: &mut ChaCha8Rng) -> Tree {
    let p = x.first().map_or(0, Vec::len);
    let mut tree = Tree { nodes: Vec::new() };
    fn grow(
        tree: &mut Tree,
        x: &[Vec<f64>],
        y: &[f64],
        idx: &[usize],
        depth: usize,
        task: TreeTask,
        params: TreeParams,
        p: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let me = tree.nodes.len();
        tree.nodes.push(Node::Leaf { value: leaf_value(task, y, idx) });
        if depth >= params.max_depth || idx.len() < 2 * params.min_leaf.max(1) {
            return me;
        }
        let features: Vec<usize> = match params.max_features {
            Some(m) if m < p => {
                let mut all: Vec<usize> = (0..p).collect();
                for i in 0..m {
                    let j = rng.random_range(i..p);
                    all.swap(i, j);
                }
                all.truncate(m);
                all.sort_unstable();
                all
            }
            _ => (0..p).collect(),
        };
        let mut best: Option<(f64, usize, f64)> = None;
        for f in features {
            if let Some((g, t)) = best_split(x, y, idx, f, task, params.min_leaf.max(1)) {
                if best.is_none_or(|(bg, _, _)| g > bg + 1e-12) {
                    best = Some((g, f, t));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = grow(tree, x, y, &l, depth + 1, task, params, p, rng);
        let right = grow(tree, x, y, &r, depth + 1, task, params, p, rng);
        tree.nodes[me] = Node::Split { feature, threshold, left, right };
        me
    }
    if !idx.is_empty() {
        grow(&mut tree, x, y, idx, 0, task, params, p, rng);
    }
    tree
}

pub fn fit_forest(x: &[Vec<f64>], y: &[f64], task: TreeTask, n_trees: usize, max_depth: usize, seed: u64) -> FittedModel {
    let n = x.len();
    let p = x.first().map_or(0, Vec::len);
    let max_features = match task {
        TreeTask::Regression => (p / 3).max(1),
        TreeTask::Classification(_) => ((p as f64).sqrt().floor() as usize).max(1),
    };
    let params = TreeParams { max_depth, min_leaf: 2, max_features: Some(max_features) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trees = (0..n_trees)
        .map(|_| {
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_tree(x, y, &sample, task, params, &mut rng)
        })
        .collect();
    FittedModel::Forest { trees }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDescription {
    pub preprocessing: Vec<TransformStep>,
    pub family: String,
    pub hyperparameters: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub name: String,
    pub family: String,
    pub hyperparameters: BTreeMap<String, Value>,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

/// A saved model: pipeline, fitted parameters and cross-validation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub problem_type: ProblemType,
    pub target: String,
    pub feature_names: Vec<String>,
    /// Class labels in index order (classification only).
    #[serde(default)]
    pub classes: Vec<String>,
    pub pipeline: PipelineDescription,
    pub fitted: FittedModel,
    pub metric: String,
    pub cv_folds: usize,
    pub cv_fold_scores: Vec<f64>,
    pub cv_score: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub candidates: Vec<CandidateResult>,
    /// File with out-of-fold predictions of the selected candidate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_predictions: Option<String>,
    #[serde(default)]
    pub training_rows: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read model `{path}`: {message}")]
    Read { path: String, message: String },
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error("{0}")]
    Data(String),
}

/// Model outputs: one value per row, or class probabilities per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    Values(Vec<f64>),
    Probabilities(Vec<Vec<f64>>),
}

impl ModelArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<ModelArtifact, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let m: ModelArtifact =
            serde_json::from_str(&text).map_err(|e| ModelError::Read { path: path.display().to_string(), message: e.to_string() })?;
        if m.format != MODEL_FORMAT {
            return Err(ModelError::Format(m.format));
        }
        Ok(m)
    }

    pub fn matrix(&self, frame: &Frame) -> Result<Vec<Vec<f64>>, ModelError> {
        frame.numeric_matrix(&self.feature_names).map_err(ModelError::Data)
    }

    pub fn predict_rows(&self, x: &[Vec<f64>]) -> Predictions {
        match self.problem_type {
            ProblemType::Classification => {
                let k = self.classes.len();
                Predictions::Probabilities(x.iter().map(|r| self.fitted.predict_proba(r, k)).collect())
            }
            _ => Predictions::Values(x.iter().map(|r| self.fitted.predict_value(r)).collect()),
        }
    }

    pub fn predict(&self, frame: &Frame) -> Result<Predictions, ModelError> {
        Ok(self.predict_rows(&self.matrix(frame)?))
    }

    /// Target as numbers (regression) or class indices (classification).
    /// Rows whose label is unknown to the model map to `None`.
    pub fn encode_target(&self, frame: &Frame) -> Result<Vec<Option<f64>>, ModelError> {
        let col = frame.column(&self.target).ok_or_else(|| ModelError::Data(format!("missing target column `{}`", self.target)))?;
        match self.problem_type {
            ProblemType::Classification => Ok(col
                .values
                .iter()
                .map(|v| {
                    if super::frame::is_missing_token(v) {
                        None
                    } else {
                        self.classes.iter().position(|c| c == v.trim()).map(|i| i as f64)
                    }
                })
                .collect()),
            _ => col.numeric().ok_or_else(|| ModelError::Data(format!("target `{}` is not numeric", self.target))),
        }
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Coefficient of determination against the target's own mean.
pub fn r2(pred: &[f64], target: &[f64]) -> f64 {
    let m = target.iter().sum::<f64>() / target.len() as f64;
    let sst: f64 = target.iter().map(|t| (t - m) * (t - m)).sum();
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    if sst == 0.0 {
        if sse == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - sse / sst
    }
}

/// Area under the ROC curve from scores and 0/1 labels (ties count half).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let ranks = super::stats::average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// Macro one-vs-rest AUROC over classes present in `y`; binary problems use
/// the positive class only.
pub fn auroc_macro(probs: &[Vec<f64>], y: &[usize], k: usize) -> f64 {
    if k == 2 {
        let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let l: Vec<bool> = y.iter().map(|c| *c == 1).collect();
        return auroc(&s, &l).unwrap_or(0.5);
    }
    let vals: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let l: Vec<bool> = y.iter().map(|v| *v == c).collect();
            auroc(&s, &l)
        })
        .collect();
    if vals.is_empty() {
        0.5
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_recovers_exact_line() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - 3.0 * r[1] + 1.0).collect();
        let m = fit_ridge(&x, &y, 0.0);
        for (r, t) in x.iter().zip(&y) {
            assert!((m.predict_value(r) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn ridge_handles_collinear_columns() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let m = fit_ridge(&x, &y, 0.0);
        assert!((m.predict_value(&[5.0, 10.0]) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn tree_splits_step_function() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 5.0 }).collect();
        let idx: Vec<usize> = (0..20).collect();
        let t = fit_tree(&x, &y, &idx, TreeTask::Regression, TreeParams { max_depth: 3, min_leaf: 1, max_features: None }, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.leaf_value(&[3.0])[0], 0.0);
        assert_eq!(t.leaf_value(&[15.0])[0], 5.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn logistic_separates() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let m = fit_logistic(&x, &y, 2, 0.1);
        assert!(m.predict_proba(&[35.0], 2)[1] > 0.9);
        assert!(m.predict_proba(&[2.0], 2)[1] < 0.1);
    }

    #[test]
    fn auroc_known_values() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), Some(0.75));
        assert_eq!(auroc(&[1.0, 2.0], &[true, true]), None);
    }
}
