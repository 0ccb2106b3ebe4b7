//! The structured project plan: stages, tasks and subtasks, and the progress
//! tracker that picks the next subtask to run.

pub mod condition;
pub mod context;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use condition::{Condition, Truth};
pub use context::{CtxValue, ProjectContext, ValueType, VOCABULARY};

/// Per-subtask attempt cap applied when no other value is configured.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

const DEFAULT_PLAN: &str = include_str!("../../resources/default_plan.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("plan document could not be parsed: {0}")]
    Parse(String),
    #[error("invalid plan: {0}")]
    Validation(String),
    #[error("invalid condition `{condition}`: {message}")]
    Condition { condition: String, message: String },
    #[error("unknown subtask `{0}`")]
    UnknownSubtask(String),
    #[error("unknown context key `{0}`")]
    UnknownContextKey(String),
    #[error("value `{value}` does not match the declared type of `{key}`")]
    ContextType { key: String, value: String },
    #[error("subtask `{0}` does not allow revisiting")]
    NotRevisitable(String),
    #[error("subtask `{0}` is already completed")]
    AlreadyCompleted(String),
    #[error("plan state belongs to a different plan ({found}, expected {expected})")]
    SpecMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionKind {
    Mandatory,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtaskSpec {
    pub id: String,
    pub name: String,
    pub description: String,
    pub selection: SelectionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<String>,
    /// The episode cannot be meaningfully performed without asking the user.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub requires_user: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_revisit: bool,
    #[serde(skip)]
    parsed_condition: Option<Condition>,
}

impl SubtaskSpec {
    pub fn new_mandatory(id: &str, name: &str, description: &str) -> Self {
        SubtaskSpec {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            selection: SelectionKind::Mandatory,
            condition: None,
            requires_user: false,
            allow_revisit: false,
            parsed_condition: None,
        }
    }

    pub fn is_mandatory(&self) -> bool {
        self.selection == SelectionKind::Mandatory
    }

    pub fn parsed_condition(&self) -> Option<&Condition> {
        self.parsed_condition.as_ref()
    }

    pub fn evaluate(&self, ctx: &ProjectContext) -> Truth {
        match &self.parsed_condition {
            Some(c) => c.evaluate(ctx),
            None => Truth::True,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub subtasks: Vec<SubtaskSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub tasks: Vec<TaskSpec>,
}

impl StageSpec {
    pub fn subtasks(&self) -> impl Iterator<Item = &SubtaskSpec> {
        self.tasks.iter().flat_map(|t| t.subtasks.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub schema_version: String,
    pub stages: Vec<StageSpec>,
    #[serde(skip)]
    id: String,
}

impl PlanSpec {
    /// Content hash identifying this plan.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn subtasks(&self) -> impl Iterator<Item = &SubtaskSpec> {
        self.stages.iter().flat_map(|s| s.subtasks())
    }

    pub fn subtask(&self, id: &str) -> Option<&SubtaskSpec> {
        self.subtasks().find(|s| s.id == id)
    }

    pub fn stage_index_of(&self, id: &str) -> Option<usize> {
        self.stages.iter().position(|st| st.subtasks().any(|s| s.id == id))
    }

    pub fn task_count(&self) -> usize {
        self.stages.iter().map(|s| s.tasks.len()).sum()
    }

    pub fn subtask_count(&self) -> usize {
        self.subtasks().count()
    }

    /// The plan serialized back to its document form.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Parses and validates a plan document.
pub fn load_plan(document: &str) -> Result<PlanSpec, PlanError> {
    let mut spec: PlanSpec = serde_json::from_str(document).map_err(|e| PlanError::Parse(e.to_string()))?;
    validate(&mut spec)?;
    let canonical = serde_json::to_string(&spec).expect("plan serializes");
    spec.id = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(spec)
}

/// The bundled default plan.
pub fn default_plan() -> PlanSpec {
    load_plan(DEFAULT_PLAN).expect("bundled plan is valid")
}

pub fn default_plan_document() -> &'static str {
    DEFAULT_PLAN
}

fn validate(spec: &mut PlanSpec) -> Result<(), PlanError> {
    let invalid = |m: String| Err(PlanError::Validation(m));
    if spec.schema_version.trim().is_empty() {
        return invalid("schema_version is empty".into());
    }
    if spec.stages.is_empty() {
        return invalid("plan has no stages".into());
    }
    let mut stage_names = HashSet::new();
    let mut ids = HashSet::new();
    for stage in &mut spec.stages {
        if stage.name.trim().is_empty() {
            return invalid("stage with an empty name".into());
        }
        if !stage_names.insert(stage.name.clone()) {
            return invalid(format!("duplicate stage name `{}`", stage.name));
        }
        if stage.tasks.is_empty() {
            return invalid(format!("stage `{}` has no tasks", stage.name));
        }
        for task in &mut stage.tasks {
            if task.name.trim().is_empty() {
                return invalid(format!("task with an empty name in stage `{}`", stage.name));
            }
            if task.subtasks.is_empty() {
                return invalid(format!("task `{}` has no subtasks", task.name));
            }
            for sub in &mut task.subtasks {
                if sub.id.is_empty() || !sub.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                    return invalid(format!("subtask id `{}` must be non-empty and use [A-Za-z0-9_-]", sub.id));
                }
                if !ids.insert(sub.id.clone()) {
                    return invalid(format!("duplicate subtask id `{}`", sub.id));
                }
                if sub.name.trim().is_empty() {
                    return invalid(format!("subtask `{}` has an empty name", sub.id));
                }
                match (sub.selection, &sub.condition) {
                    (SelectionKind::Conditional, None) => {
                        return invalid(format!("conditional subtask `{}` has no condition", sub.id));
                    }
                    (SelectionKind::Mandatory, Some(_)) => {
                        return invalid(format!("mandatory subtask `{}` must not have a condition", sub.id));
                    }
                    (SelectionKind::Conditional, Some(text)) => {
                        let cond = Condition::parse(text)?;
                        cond.validate()?;
                        sub.parsed_condition = Some(cond);
                    }
                    (SelectionKind::Mandatory, None) => {}
                }
            }
        }
    }
    Ok(())
}

/// Binary terminal reward given by the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Reward {
    Zero,
    One,
}

impl Reward {
    pub fn from_approved(ok: bool) -> Self {
        if ok {
            Reward::One
        } else {
            Reward::Zero
        }
    }

    pub fn value(self) -> u8 {
        self.into()
    }
}

impl From<Reward> for u8 {
    fn from(r: Reward) -> u8 {
        match r {
            Reward::Zero => 0,
            Reward::One => 1,
        }
    }
}

impl TryFrom<u8> for Reward {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Reward::Zero),
            1 => Ok(Reward::One),
            other => Err(format!("reward must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    pub attempts: u32,
    pub last_reward: Option<Reward>,
    pub completed_at_episode: Option<u64>,
    /// How many times a completed subtask was reopened.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub reopened: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl SubtaskRecord {
    pub fn is_completed(&self) -> bool {
        self.completed_at_episode.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    UserRequested,
    ConditionFalse,
}

/// Serializable part of [`PlanState`]; the `PlanSpec` travels separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStateData {
    pub spec_id: String,
    pub max_attempts: u32,
    pub records: BTreeMap<String, SubtaskRecord>,
    pub skipped: BTreeMap<String, SkipReason>,
}

/// Progress through a plan. Cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanState {
    spec: Arc<PlanSpec>,
    max_attempts: u32,
    records: BTreeMap<String, SubtaskRecord>,
    skipped: BTreeMap<String, SkipReason>,
}

impl Serialize for PlanState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.data().serialize(s)
    }
}

/// Outcome of asking the plan what to do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NextSubtask {
    Run { id: String },
    /// Nothing in the current stage can run until these keys are known.
    AwaitingContext { subtask_ids: Vec<String>, missing_keys: Vec<String> },
    /// The subtask failed too often; the user must skip it (or it must be reset).
    AttemptsExhausted { id: String },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    Pending,
    Failed,
    Completed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskProgress {
    pub id: String,
    pub name: String,
    pub status: SubtaskStatus,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProgress {
    pub name: String,
    pub completed: usize,
    pub pending: usize,
    pub skipped: usize,
    pub subtasks: Vec<SubtaskProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub stages: Vec<StageProgress>,
    pub completed: usize,
    pub pending: usize,
    pub skipped: usize,
}

impl PlanState {
    pub fn new(spec: Arc<PlanSpec>) -> Self {
        Self::with_max_attempts(spec, DEFAULT_MAX_ATTEMPTS)
    }

    pub fn with_max_attempts(spec: Arc<PlanSpec>, max_attempts: u32) -> Self {
        PlanState { spec, max_attempts: max_attempts.max(1), records: BTreeMap::new(), skipped: BTreeMap::new() }
    }

    /// Rebuilds a state from its serialized form.
    pub fn restore(spec: Arc<PlanSpec>, data: PlanStateData) -> Result<Self, PlanError> {
        if data.spec_id != spec.id() {
            return Err(PlanError::SpecMismatch { expected: spec.id().to_string(), found: data.spec_id });
        }
        for id in data.records.keys().chain(data.skipped.keys()) {
            if spec.subtask(id).is_none() {
                return Err(PlanError::UnknownSubtask(id.clone()));
            }
        }
        Ok(PlanState { spec, max_attempts: data.max_attempts.max(1), records: data.records, skipped: data.skipped })
    }

    pub fn data(&self) -> PlanStateData {
        PlanStateData {
            spec_id: self.spec.id().to_string(),
            max_attempts: self.max_attempts,
            records: self.records.clone(),
            skipped: self.skipped.clone(),
        }
    }

    pub fn spec(&self) -> &Arc<PlanSpec> {
        &self.spec
    }

    pub fn max_attempts(&self) -> u32 {
        self.max_attempts
    }

    pub fn records(&self) -> &BTreeMap<String, SubtaskRecord> {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&SubtaskRecord> {
        self.records.get(id)
    }

    pub fn skipped(&self) -> &BTreeMap<String, SkipReason> {
        &self.skipped
    }

    pub fn is_completed(&self, id: &str) -> bool {
        self.records.get(id).is_some_and(SubtaskRecord::is_completed)
    }

    pub fn is_skipped(&self, id: &str) -> bool {
        self.skipped.contains_key(id)
    }

    pub fn is_resolved(&self, id: &str) -> bool {
        self.is_completed(id) || self.is_skipped(id)
    }

    pub fn completed_ids(&self) -> BTreeSet<String> {
        self.records.iter().filter(|(_, r)| r.is_completed()).map(|(k, _)| k.clone()).collect()
    }

    /// Every subtask is either completed or skipped.
    pub fn is_complete(&self) -> bool {
        self.spec.subtasks().all(|s| self.is_resolved(&s.id))
    }

    fn require(&self, id: &str) -> Result<&SubtaskSpec, PlanError> {
        self.spec.subtask(id).ok_or_else(|| PlanError::UnknownSubtask(id.to_string()))
    }

    /// Selects the next subtask. Conditional subtasks whose condition is false
    /// when reached are marked skipped in the returned state.
    pub fn next_subtask(&self, ctx: &ProjectContext) -> (PlanState, NextSubtask) {
        let mut state = self.clone();
        for stage in &self.spec.stages {
            let mut deferred = Vec::new();
            let mut missing = Vec::new();
            for sub in stage.subtasks() {
                if state.is_resolved(&sub.id) {
                    continue;
                }
                let runnable = match sub.evaluate(ctx) {
                    Truth::True => true,
                    Truth::False => {
                        // Only conditional subtasks can evaluate false.
                        state.skipped.insert(sub.id.clone(), SkipReason::ConditionFalse);
                        false
                    }
                    Truth::Unknown => {
                        deferred.push(sub.id.clone());
                        if let Some(c) = sub.parsed_condition() {
                            missing.extend(c.missing_keys(ctx));
                        }
                        false
                    }
                };
                if runnable {
                    let rec = state.records.get(&sub.id);
                    let exhausted = rec.is_some_and(|r| r.attempts >= state.max_attempts);
                    let next = if exhausted {
                        NextSubtask::AttemptsExhausted { id: sub.id.clone() }
                    } else {
                        NextSubtask::Run { id: sub.id.clone() }
                    };
                    return (state, next);
                }
            }
            if !deferred.is_empty() {
                missing.sort();
                missing.dedup();
                return (state, NextSubtask::AwaitingContext { subtask_ids: deferred, missing_keys: missing });
            }
        }
        (state, NextSubtask::Done)
    }

    /// Records the terminal reward of an episode on `subtask_id`.
    pub fn record_episode_result(&self, subtask_id: &str, reward: Reward, episode_index: u64) -> Result<PlanState, PlanError> {
        self.require(subtask_id)?;
        let mut state = self.clone();
        let rec = state.records.entry(subtask_id.to_string()).or_default();
        rec.attempts += 1;
        rec.last_reward = Some(reward);
        if reward == Reward::One && rec.completed_at_episode.is_none() {
            rec.completed_at_episode = Some(episode_index);
        }
        if reward == Reward::One {
            state.skipped.remove(subtask_id);
        }
        Ok(state)
    }

    /// Explicit user skip; the only way a mandatory subtask becomes skipped.
    pub fn user_skip(&self, subtask_id: &str) -> Result<PlanState, PlanError> {
        self.require(subtask_id)?;
        if self.is_completed(subtask_id) {
            return Err(PlanError::AlreadyCompleted(subtask_id.to_string()));
        }
        let mut state = self.clone();
        state.skipped.insert(subtask_id.to_string(), SkipReason::UserRequested);
        Ok(state)
    }

    /// Makes a completed (or skipped) subtask pending again. Only subtasks with
    /// `allow_revisit` may be reopened; this is how earlier stages are revisited.
    pub fn reopen(&self, subtask_id: &str) -> Result<PlanState, PlanError> {
        let spec = self.require(subtask_id)?;
        if !spec.allow_revisit {
            return Err(PlanError::NotRevisitable(subtask_id.to_string()));
        }
        let mut state = self.clone();
        state.skipped.remove(subtask_id);
        let rec = state.records.entry(subtask_id.to_string()).or_default();
        if rec.completed_at_episode.take().is_some() {
            rec.reopened += 1;
        }
        rec.attempts = 0;
        rec.last_reward = None;
        Ok(state)
    }

    /// Clears the failure count of a subtask so it can be attempted again.
    pub fn reset_attempts(&self, subtask_id: &str) -> Result<PlanState, PlanError> {
        self.require(subtask_id)?;
        let mut state = self.clone();
        if let Some(rec) = state.records.get_mut(subtask_id) {
            if !rec.is_completed() {
                rec.attempts = 0;
            }
        }
        Ok(state)
    }

    pub fn status_of(&self, id: &str) -> SubtaskStatus {
        if self.is_skipped(id) {
            SubtaskStatus::Skipped
        } else if self.is_completed(id) {
            SubtaskStatus::Completed
        } else if self.records.get(id).is_some_and(|r| r.last_reward == Some(Reward::Zero)) {
            SubtaskStatus::Failed
        } else {
            SubtaskStatus::Pending
        }
    }

    pub fn progress_snapshot(&self) -> ProgressReport {
        let mut stages = Vec::with_capacity(self.spec.stages.len());
        for stage in &self.spec.stages {
            let mut sp = StageProgress { name: stage.name.clone(), completed: 0, pending: 0, skipped: 0, subtasks: Vec::new() };
            for sub in stage.subtasks() {
                let status = self.status_of(&sub.id);
                match status {
                    SubtaskStatus::Completed => sp.completed += 1,
                    SubtaskStatus::Skipped => sp.skipped += 1,
                    SubtaskStatus::Pending | SubtaskStatus::Failed => sp.pending += 1,
                }
                sp.subtasks.push(SubtaskProgress {
                    id: sub.id.clone(),
                    name: sub.name.clone(),
                    status,
                    attempts: self.records.get(&sub.id).map_or(0, |r| r.attempts),
                });
            }
            stages.push(sp);
        }
        ProgressReport {
            completed: stages.iter().map(|s| s.completed).sum(),
            pending: stages.iter().map(|s| s.pending).sum(),
            skipped: stages.iter().map(|s| s.skipped).sum(),
            stages,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> PlanState {
        PlanState::new(Arc::new(default_plan()))
    }

    #[test]
    fn default_plan_shape() {
        let p = default_plan();
        assert_eq!(p.stages.len(), 6);
        assert_eq!(p.task_count(), 11);
        assert_eq!(p.subtask_count(), 30);
        assert_eq!(p.id().len(), 64);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(load_plan("{"), Err(PlanError::Parse(_))));
        assert!(matches!(load_plan(r#"{"schema_version":"1.0","stages":[]}"#), Err(PlanError::Validation(_))));
        let no_cond = r#"{"schema_version":"1.0","stages":[{"name":"s","tasks":[{"name":"t","subtasks":[
            {"id":"a","name":"A","description":"","selection":"conditional"}]}]}]}"#;
        assert!(matches!(load_plan(no_cond), Err(PlanError::Validation(_))));
        let dup = r#"{"schema_version":"1.0","stages":[{"name":"s","tasks":[{"name":"t","subtasks":[
            {"id":"a","name":"A","description":"","selection":"mandatory"},
            {"id":"a","name":"B","description":"","selection":"mandatory"}]}]}]}"#;
        assert!(matches!(load_plan(dup), Err(PlanError::Validation(_))));
        let bad_key = r#"{"schema_version":"1.0","stages":[{"name":"s","tasks":[{"name":"t","subtasks":[
            {"id":"a","name":"A","description":"","selection":"conditional","condition":"colour = \"red\""}]}]}]}"#;
        assert!(matches!(load_plan(bad_key), Err(PlanError::UnknownContextKey(_))));
    }

    #[test]
    fn fresh_plan_starts_with_upload() {
        let (_, next) = state().next_subtask(&ProjectContext::new());
        assert_eq!(next, NextSubtask::Run { id: "upload_data_file".into() });
    }

    #[test]
    fn failed_subtask_is_reselected() {
        let s = state().record_episode_result("upload_data_file", Reward::Zero, 0).unwrap();
        assert_eq!(s.record("upload_data_file").unwrap().attempts, 1);
        let (_, next) = s.next_subtask(&ProjectContext::new());
        assert_eq!(next, NextSubtask::Run { id: "upload_data_file".into() });
        assert!(state().record_episode_result("nonexistent", Reward::One, 0).is_err());
    }

    #[test]
    fn attempts_cap_requires_user_skip() {
        let mut s = PlanState::with_max_attempts(Arc::new(default_plan()), 2);
        for i in 0..2 {
            s = s.record_episode_result("upload_data_file", Reward::Zero, i).unwrap();
        }
        let (_, next) = s.next_subtask(&ProjectContext::new());
        assert_eq!(next, NextSubtask::AttemptsExhausted { id: "upload_data_file".into() });
        let s = s.user_skip("upload_data_file").unwrap();
        let (_, next) = s.next_subtask(&ProjectContext::new());
        assert_eq!(next, NextSubtask::Run { id: "check_hardware".into() });
    }

    #[test]
    fn snapshot_counts() {
        let s = state();
        let r = s.progress_snapshot();
        assert_eq!((r.completed, r.pending, r.skipped), (0, 30, 0));
        let s = s.record_episode_result("check_hardware", Reward::One, 1).unwrap().user_skip("perform_eda").unwrap();
        let r = s.progress_snapshot();
        assert_eq!((r.completed, r.pending, r.skipped), (1, 28, 1));
        assert_eq!(r.stages[0].completed, 1);
        assert_eq!(r.stages[1].skipped, 1);
        assert_eq!(s.progress_snapshot(), r);
    }

    #[test]
    fn reopen_respects_flag() {
        let s = state().record_episode_result("check_hardware", Reward::One, 1).unwrap();
        assert!(matches!(s.reopen("check_hardware"), Err(PlanError::NotRevisitable(_))));
        let s = s.record_episode_result("feature_selection", Reward::One, 2).unwrap();
        let s = s.reopen("feature_selection").unwrap();
        assert!(!s.is_completed("feature_selection"));
        assert_eq!(s.record("feature_selection").unwrap().reopened, 1);
    }

    #[test]
    fn state_round_trips_through_data() {
        let s = state().record_episode_result("check_hardware", Reward::One, 3).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let data: PlanStateData = serde_json::from_str(&json).unwrap();
        let back = PlanState::restore(s.spec().clone(), data).unwrap();
        assert_eq!(back, s);
        assert!(json.contains("\"last_reward\":1"));
    }
}
