//! Failure detectors. Every detector is a pure function of the session log,
//! its blobs and the dataset sidecar.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::{ColumnRole, Sidecar};
use crate::codeexec::ExecStatus;
use crate::plan::SkipReason;
use crate::reasoning::{Action, EpisodeCategory};
use crate::session::store::Blobs;
use crate::session::{EventBody, SessionEvent, SessionRecord, SessionStatus, UserRequest};
use crate::tools::{ModelArtifact, ToolStatus, TransformStep};

/// Share of rows a single transformation may remove without the user
/// having agreed to it.
pub const EXCESSIVE_ROW_LOSS: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureFlags {
    pub did_not_finish: bool,
    pub eda_partially_failed: bool,
    pub models_not_saved: bool,
    pub no_feature_review_opportunity: bool,
    pub target_imputed_unchecked: bool,
    pub rows_dropped_excessively: bool,
    pub no_cross_validation: bool,
    pub subgroup_by_retraining: bool,
    pub id_columns_missed: bool,
    pub leakage_columns_missed: bool,
}

impl FailureFlags {
    pub const NAMES: [&'static str; 10] = [
        "did_not_finish",
        "eda_partially_failed",
        "models_not_saved",
        "no_feature_review_opportunity",
        "target_imputed_unchecked",
        "rows_dropped_excessively",
        "no_cross_validation",
        "subgroup_by_retraining",
        "id_columns_missed",
        "leakage_columns_missed",
    ];

    pub fn as_array(&self) -> [bool; 10] {
        [
            self.did_not_finish,
            self.eda_partially_failed,
            self.models_not_saved,
            self.no_feature_review_opportunity,
            self.target_imputed_unchecked,
            self.rows_dropped_excessively,
            self.no_cross_validation,
            self.subgroup_by_retraining,
            self.id_columns_missed,
            self.leakage_columns_missed,
        ]
    }

    /// Names of the flags that fired.
    pub fn fired(&self) -> Vec<&'static str> {
        Self::NAMES.iter().zip(self.as_array()).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }
}

/// What the detectors look at.
pub struct DetectorInput<'a> {
    pub record: &'a SessionRecord,
    pub blobs: &'a dyn Blobs,
    pub sidecar: &'a Sidecar,
    /// Used when the log never recorded a target column.
    pub target: &'a str,
}

const EDA_TOOLS: [&str; 3] = ["eda", "descriptive_statistics", "missingness_profile"];
const EDA_CODE_WORDS: [&str; 7] = ["describe", "summary", "hist", "corr", "value_counts", "eda", "plot"];
const EXPLOIT_TOOLS: [&str; 3] = ["permutation_importance", "subgroup_analysis", "confidence_stratify"];
const EXPLOIT_CODE_WORDS: [&str; 4] = ["subgroup", "groupby", "importance", "shap"];
const CV_CODE_WORDS: [&str; 4] = ["cross_val", "kfold", "cv=", "cross-validation"];
const MODEL_FILE_EXTENSIONS: [&str; 5] = [".pkl", ".joblib", ".model", ".onnx", ".pt"];

/// A fitting event: a model tool fit or a code cell that calls `.fit(`.
#[derive(Debug, Clone, PartialEq)]
enum Fit {
    Tool { seq: u64, fold_scores: usize, path: String, hash: String },
    Code { seq: u64, cross_validated: bool, saved: bool },
}

impl Fit {
    fn seq(&self) -> u64 {
        match self {
            Fit::Tool { seq, .. } | Fit::Code { seq, .. } => *seq,
        }
    }
}

fn action_at(record: &SessionRecord, episode: u64, step: usize) -> Option<&Action> {
    record.episodes().get(episode as usize).and_then(|t| t.steps.get(step)).map(|s| &s.action)
}

fn code_at(record: &SessionRecord, episode: u64, step: usize) -> Option<String> {
    match action_at(record, episode, step) {
        Some(Action::GenerateCode { code, .. }) => Some(code.to_ascii_lowercase()),
        _ => None,
    }
}

fn has_any(text: &str, words: &[&str]) -> bool {
    words.iter().any(|w| text.contains(w))
}

/// Files created by the code cell of a given result event.
fn files_created_by(record: &SessionRecord, from: u64) -> Vec<String> {
    record
        .events()
        .iter()
        .skip(from as usize)
        .take_while(|e| !matches!(e.body, EventBody::Feedback { .. }))
        .filter_map(|e| match &e.body {
            EventBody::FileIndexed { path, .. } => Some(path.clone()),
            _ => None,
        })
        .collect()
}

fn fits(record: &SessionRecord) -> Vec<Fit> {
    let mut out = Vec::new();
    for e in record.events() {
        match &e.body {
            EventBody::ModelFit(m) => out.push(Fit::Tool { seq: e.seq, fold_scores: m.cv_fold_scores.len(), path: m.path.clone(), hash: m.hash.clone() }),
            EventBody::ExecutionResultRef { episode, step, status: ExecStatus::Success, .. } => {
                let Some(code) = code_at(record, *episode, *step) else { continue };
                if code.contains(".fit(") {
                    let saved = files_created_by(record, e.seq).iter().any(|f| MODEL_FILE_EXTENSIONS.iter().any(|x| f.ends_with(x)));
                    out.push(Fit::Code { seq: e.seq, cross_validated: has_any(&code, &CV_CODE_WORDS), saved });
                }
            }
            _ => {}
        }
    }
    out
}

fn target_of(input: &DetectorInput<'_>) -> String {
    input.record.context().text("target_column").unwrap_or(input.target).to_string()
}

/// Index of the question event a user message answered, with its prompt.
fn answered_questions(record: &SessionRecord) -> Vec<(u64, String, String)> {
    let mut out = Vec::new();
    for e in record.events() {
        if let EventBody::UserMessage { text, reply_to: Some(q) } = &e.body {
            if let Some(EventBody::QueryPending { request: UserRequest::Question { prompt, .. } }) = record.event(*q).map(|x| &x.body) {
                out.push((e.seq, prompt.to_ascii_lowercase(), text.to_ascii_lowercase()));
            }
        }
    }
    out
}

fn affirmative(text: &str) -> bool {
    let t = text.trim_start();
    ["yes", "y ", "ok", "okay", "sure", "agreed", "go ahead", "fine"].iter().any(|w| t.starts_with(w)) || t == "y"
}

/// The user agreed, before `seq`, to a question whose prompt mentions all
/// of `words`.
fn confirmed_before(record: &SessionRecord, seq: u64, words: &[&str]) -> bool {
    answered_questions(record).iter().any(|(s, prompt, answer)| *s < seq && words.iter().all(|w| prompt.contains(w)) && affirmative(answer))
}

fn exploitation_start(record: &SessionRecord) -> Option<u64> {
    record.events().iter().find_map(|e| match &e.body {
        EventBody::EpisodeStarted { category: EpisodeCategory::ModelExploitation, .. } => Some(e.seq),
        EventBody::ToolReportRef { tool, .. } if EXPLOIT_TOOLS.contains(&tool.as_str()) => Some(e.seq),
        EventBody::ExecutionResultRef { episode, step, .. } => {
            code_at(record, *episode, *step).filter(|c| has_any(c, &EXPLOIT_CODE_WORDS)).map(|_| e.seq)
        }
        _ => None,
    })
}

fn final_model(input: &DetectorInput<'_>) -> Option<ModelArtifact> {
    let m = input.record.models().last()?;
    let bytes = input.blobs.get_blob(&m.hash)?;
    serde_json::from_slice(&bytes).ok()
}

/// Columns with `role` still feeding the final model. One-hot outputs
/// count as their source column.
fn surviving(input: &DetectorInput<'_>, role: ColumnRole) -> Vec<String> {
    let Some(model) = final_model(input) else {
        return Vec::new();
    };
    input
        .sidecar
        .iter()
        .filter(|(_, r)| **r == role)
        .map(|(c, _)| c)
        .filter(|c| model.feature_names.iter().any(|f| f == *c || f.starts_with(&format!("{c}_"))))
        .cloned()
        .collect()
}

fn eda_events(record: &SessionRecord) -> Vec<(u64, bool)> {
    record
        .events()
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ToolReportRef { tool, status, .. } if EDA_TOOLS.contains(&tool.as_str()) => Some((e.seq, *status == ToolStatus::Success)),
            EventBody::ExecutionResultRef { episode, step, status, .. } => {
                let in_eda_episode = record.episodes().get(*episode as usize).is_some_and(|t| t.episode_type.category == EpisodeCategory::DataExploration);
                let code = code_at(record, *episode, *step)?;
                (in_eda_episode || has_any(&code, &EDA_CODE_WORDS)).then_some((e.seq, *status == ExecStatus::Success))
            }
            _ => None,
        })
        .collect()
}

fn model_fit_seq(record: &SessionRecord, fits: &[Fit]) -> Option<u64> {
    let first_fit = fits.first().map(Fit::seq);
    let first_failed_study = record.events().iter().find_map(|e| match &e.body {
        EventBody::ToolReportRef { tool, .. } if tool == "automl_study" => Some(e.seq),
        _ => None,
    });
    match (first_fit, first_failed_study) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Whether the user had a chance to review features before modeling: a
/// question about columns or features, or a validated feature-review
/// subtask.
fn feature_review_before(record: &SessionRecord, seq: u64) -> bool {
    let asked = record.events().iter().take_while(|e| e.seq < seq).any(|e| match &e.body {
        EventBody::QueryPending { request: UserRequest::Question { prompt, .. } } => {
            let p = prompt.to_ascii_lowercase();
            ["column", "feature", "variable"].iter().any(|w| p.contains(w))
        }
        _ => false,
    });
    let validated = record.events().iter().take_while(|e| e.seq < seq).any(|e| match &e.body {
        EventBody::EpisodeFinalized { subtask_id, .. } => ["exclude_keep_columns", "feature_selection", "check_irrelevant_columns"].contains(&subtask_id.as_str()),
        _ => false,
    });
    asked || validated
}

pub fn detect_failures(input: &DetectorInput<'_>) -> FailureFlags {
    let record = input.record;
    let target = target_of(input);
    let fits = fits(record);
    let last_fit = fits.last();

    let did_not_finish = record.status() != SessionStatus::Completed;

    let eda = eda_events(record);
    let eda_partially_failed = eda.iter().enumerate().any(|(i, (_, ok))| !ok && !eda[i + 1..].iter().any(|(_, ok2)| *ok2));

    let models_not_saved = match last_fit {
        None => false,
        Some(Fit::Tool { path, .. }) => !record.files().contains_key(path),
        Some(Fit::Code { saved, .. }) => !saved,
    };

    let no_feature_review_opportunity = model_fit_seq(record, &fits).is_some_and(|s| !feature_review_before(record, s));

    let target_imputed_unchecked = record.events().iter().any(|e| {
        let imputed = match &e.body {
            EventBody::DataDiff { diff, .. } => diff.rows_after == diff.rows_before && diff.missing_changed.get(&target).is_some_and(|d| d.after < d.before),
            EventBody::Transform { step: TransformStep::Impute { fills, .. }, .. } => fills.contains_key(&target),
            _ => false,
        };
        imputed && !confirmed_before(record, e.seq, &["imput"])
    });

    let rows_dropped_excessively = record.events().iter().any(|e| match &e.body {
        EventBody::DataDiff { diff, .. } => {
            diff.rows_before > 0
                && (diff.rows_before - diff.rows_after.min(diff.rows_before)) as f64 > EXCESSIVE_ROW_LOSS * diff.rows_before as f64
                && !confirmed_before(record, e.seq, &["row"])
        }
        _ => false,
    });

    let no_cross_validation = match last_fit {
        None => false,
        Some(Fit::Tool { fold_scores, .. }) => *fold_scores < 2,
        Some(Fit::Code { cross_validated, .. }) => !cross_validated,
    };

    let subgroup_by_retraining = exploitation_start(record).is_some_and(|start| fits.iter().any(|f| f.seq() > start));

    FailureFlags {
        did_not_finish,
        eda_partially_failed,
        models_not_saved,
        no_feature_review_opportunity,
        target_imputed_unchecked,
        rows_dropped_excessively,
        no_cross_validation,
        subgroup_by_retraining,
        id_columns_missed: !surviving(input, ColumnRole::Identifier).is_empty(),
        leakage_columns_missed: !surviving(input, ColumnRole::PostBaseline).is_empty(),
    }
}

/// Keywords that declare an intent in a free-form plan message, and the
/// stage they belong to.
const INTENTS: [(&str, EpisodeCategory); 10] = [
    ("exploratory", EpisodeCategory::DataExploration),
    ("descriptive", EpisodeCategory::DataExploration),
    ("missing", EpisodeCategory::DataEngineering),
    ("imput", EpisodeCategory::DataEngineering),
    ("feature selection", EpisodeCategory::DataEngineering),
    ("encode", EpisodeCategory::DataEngineering),
    ("train", EpisodeCategory::ModelBuilding),
    ("cross-validation", EpisodeCategory::ModelBuilding),
    ("feature importance", EpisodeCategory::ModelExploitation),
    ("subgroup", EpisodeCategory::ModelExploitation),
];

fn tool_succeeded(events: &[SessionEvent], names: &[&str]) -> bool {
    events.iter().any(|e| matches!(&e.body, EventBody::ToolReportRef { tool, status: ToolStatus::Success, .. } if names.contains(&tool.as_str())))
}

fn code_succeeded_with(record: &SessionRecord, words: &[&str]) -> bool {
    record.events().iter().any(|e| match &e.body {
        EventBody::ExecutionResultRef { episode, step, status: ExecStatus::Success, .. } => {
            code_at(record, *episode, *step).is_some_and(|c| has_any(&c, words))
        }
        _ => false,
    })
}

fn intent_completed(record: &SessionRecord, keyword: &str) -> bool {
    let ev = record.events();
    match keyword {
        "exploratory" | "descriptive" => tool_succeeded(ev, &EDA_TOOLS) || code_succeeded_with(record, &EDA_CODE_WORDS),
        "missing" => ev.iter().any(|e| matches!(&e.body, EventBody::DataDiff { diff, .. } if !diff.missing_changed.is_empty() || diff.rows_after < diff.rows_before)),
        "imput" => record.recipe().iter().any(|s| matches!(s, TransformStep::Impute { .. })) || code_succeeded_with(record, &["fillna", "imput"]),
        "feature selection" => tool_succeeded(ev, &["feature_selection"]) || code_succeeded_with(record, &["selectkbest", "feature_selection"]),
        "encode" => record.recipe().iter().any(|s| matches!(s, TransformStep::OneHot { .. })) || code_succeeded_with(record, &["get_dummies", "onehot"]),
        "train" => !fits(record).is_empty(),
        "cross-validation" => fits(record).iter().any(|f| match f {
            Fit::Tool { fold_scores, .. } => *fold_scores >= 2,
            Fit::Code { cross_validated, .. } => *cross_validated,
        }),
        "feature importance" => tool_succeeded(ev, &["permutation_importance"]) || code_succeeded_with(record, &["importance", "shap"]),
        "subgroup" => tool_succeeded(ev, &["subgroup_analysis"]) || code_succeeded_with(record, &["subgroup", "groupby"]),
        _ => true,
    }
}

fn enumerated_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines().filter_map(|l| {
        let t = l.trim_start();
        let rest = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).or_else(|| {
            let digits = t.chars().take_while(char::is_ascii_digit).count();
            (digits > 0).then(|| &t[digits..]).and_then(|r| r.strip_prefix(". ").or_else(|| r.strip_prefix(") ")))
        })?;
        Some(rest.to_ascii_lowercase())
    })
}

/// Per stage, whether something the session set out to do there never
/// happened. In plan-driven sessions the intents are the subtasks the plan
/// selected; in free-form sessions they are the items of enumerated plan
/// lists in assistant messages.
pub fn detect_planning_failures(record: &SessionRecord) -> BTreeMap<EpisodeCategory, bool> {
    let mut out: BTreeMap<EpisodeCategory, bool> = EpisodeCategory::PLANNED.iter().map(|c| (*c, false)).collect();
    let Some(header) = record.header() else {
        return out;
    };
    match header.mode {
        crate::session::SessionMode::Climb => {
            let (Some(plan), Some(spec)) = (record.plan(), record.spec()) else {
                return out;
            };
            for e in record.events() {
                if let EventBody::EpisodeStarted { subtask_id, category, .. } = &e.body {
                    if *category == EpisodeCategory::Freeform || spec.subtask(subtask_id).is_none() {
                        continue;
                    }
                    let resolved = plan.is_completed(subtask_id) || plan.skipped().get(subtask_id) == Some(&SkipReason::UserRequested);
                    if !resolved {
                        out.insert(*category, true);
                    }
                }
            }
        }
        crate::session::SessionMode::Baseline => {
            for e in record.events() {
                let EventBody::AssistantMessage { text, .. } = &e.body else { continue };
                for item in enumerated_lines(text) {
                    for (kw, stage) in INTENTS {
                        if item.contains(kw) && !intent_completed(record, kw) {
                            out.insert(stage, true);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Number of code cells that ended in failure. Timeouts are counted
/// separately by the runner and are not exceptions.
pub fn count_exceptions(record: &SessionRecord) -> usize {
    record.events().iter().filter(|e| matches!(e.body, EventBody::ExecutionResultRef { status: ExecStatus::Failure, .. })).count()
}
