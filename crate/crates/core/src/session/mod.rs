//! The memory unit: an append-only event log whose fold is the whole
//! session state, plus the blob store, persistence, reports and the API.

pub mod api;
pub mod archive;
pub mod diff;
pub mod report;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codeexec::ExecStatus;
use crate::plan::{load_plan, CtxValue, NextSubtask, PlanError, PlanSpec, PlanState, PlanStateData, ProjectContext, Reward, SubtaskSpec};
use crate::reasoning::{
    begin_episode, Action, CostLedger, EpisodeCategory, EpisodeConfig, EpisodeStatus, EpisodeTranscript, Feedback, FeedbackRequest,
    FeedbackSource, Prior, ReasoningError, Rejection, Selected, StateText, VETO_NOTICE,
};
use crate::tools::{Finding, ToolStatus, TransformStep};

pub use diff::{compute_data_diff, DataDiff};
pub use store::{LiveSession, SessionStore};

pub const FREEFORM_SUBTASK: &str = "freeform";
pub const EVENTS_FILE: &str = "events.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Climb,
    /// Free-form policy loop: no plan enforcement, no vetoes, no checkpoints.
    Baseline,
}

impl SessionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "climb" => Some(SessionMode::Climb),
            "baseline" => Some(SessionMode::Baseline),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionMode::Climb => "climb",
            SessionMode::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub created_at: String,
    pub mode: SessionMode,
    pub seed: u64,
    pub problem_statement: String,
    /// Working dataset at the start, relative to the workdir.
    pub dataset_path: String,
    pub dataset_profile: String,
    pub plan_document: String,
    pub episode_config: EpisodeConfig,
    pub max_attempts: u32,
    pub policy: String,
}

/// Something the engine is waiting for the user to provide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "request", rename_all = "snake_case")]
pub enum UserRequest {
    Question { episode: u64, step: usize, subtask_id: String, prompt: String },
    Validation { episode: u64, subtask_id: String, summary: String },
    /// A plan condition needs a fact nobody has recorded yet.
    Context { subtask_ids: Vec<String>, key: String, prompt: String },
    AttemptsExhausted { subtask_id: String, attempts: u32 },
}

impl UserRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            UserRequest::Question { .. } => "question",
            UserRequest::Validation { .. } => "validation",
            UserRequest::Context { .. } => "context",
            UserRequest::AttemptsExhausted { .. } => "attempts_exhausted",
        }
    }

    pub fn prompt_text(&self) -> String {
        match self {
            UserRequest::Question { prompt, .. } => prompt.clone(),
            UserRequest::Validation { subtask_id, summary, .. } => format!("Please validate subtask `{subtask_id}`: {summary}"),
            UserRequest::Context { prompt, .. } => prompt.clone(),
            UserRequest::AttemptsExhausted { subtask_id, attempts } => {
                format!("Subtask `{subtask_id}` was rejected {attempts} times. Skip it or retry?")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub hash: String,
    pub size: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub episode: Option<u64>,
    pub path: String,
    pub hash: String,
    pub problem_type: String,
    pub family: String,
    pub metric: String,
    pub cv_score: f64,
    pub cv_fold_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionCreated(Box<SessionHeader>),
    UserMessage {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reply_to: Option<u64>,
    },
    AssistantMessage {
        episode: u64,
        step: usize,
        text: String,
    },
    EpisodeStarted {
        episode: u64,
        subtask_id: String,
        category: EpisodeCategory,
    },
    Action {
        episode: u64,
        step: usize,
        action: Action,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rationale: Option<String>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        forced: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        rejections: Vec<Rejection>,
    },
    EpisodeAborted {
        episode: u64,
        diagnostic: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        rejections: Vec<Rejection>,
    },
    Feedback {
        episode: u64,
        step: usize,
        source: FeedbackSource,
        raw: String,
    },
    ToolReportRef {
        episode: u64,
        step: usize,
        tool: String,
        status: ToolStatus,
        hash: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        artifacts: Vec<String>,
    },
    ExecutionResultRef {
        episode: u64,
        step: usize,
        cell_id: String,
        status: ExecStatus,
        hash: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error_line: Option<String>,
    },
    PlanUpdate {
        plan: PlanStateData,
        next: NextSubtask,
    },
    EpisodeFinalized {
        episode: u64,
        subtask_id: String,
        reward: Reward,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        comment: Option<String>,
    },
    DataDiff {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<u64>,
        before: String,
        after: String,
        diff: DataDiff,
    },
    ReportGenerated {
        path: String,
        hash: String,
        forced: bool,
    },
    QueryPending {
        request: UserRequest,
    },
    ContextUpdate {
        key: String,
        value: CtxValue,
    },
    Transform {
        dataset: String,
        step: TransformStep,
    },
    Finding {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<u64>,
        subtask_id: String,
        finding: Finding,
    },
    ModelFit(ModelFit),
    FileIndexed {
        path: String,
        hash: String,
        size: u64,
    },
    FileRemoved {
        path: String,
    },
    UserSkip {
        subtask_id: String,
    },
    AttemptsReset {
        subtask_id: String,
    },
    LlmExchange {
        exchange: Value,
    },
    SessionClosed {
        status: SessionStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diagnostic: Option<String>,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::SessionCreated(_) => "session_created",
            EventBody::UserMessage { .. } => "user_message",
            EventBody::AssistantMessage { .. } => "assistant_message",
            EventBody::EpisodeStarted { .. } => "episode_started",
            EventBody::Action { .. } => "action",
            EventBody::EpisodeAborted { .. } => "episode_aborted",
            EventBody::Feedback { .. } => "feedback",
            EventBody::ToolReportRef { .. } => "tool_report_ref",
            EventBody::ExecutionResultRef { .. } => "execution_result_ref",
            EventBody::PlanUpdate { .. } => "plan_update",
            EventBody::EpisodeFinalized { .. } => "episode_finalized",
            EventBody::DataDiff { .. } => "data_diff",
            EventBody::ReportGenerated { .. } => "report_generated",
            EventBody::QueryPending { .. } => "query_pending",
            EventBody::ContextUpdate { .. } => "context_update",
            EventBody::Transform { .. } => "transform",
            EventBody::Finding { .. } => "finding",
            EventBody::ModelFit(_) => "model_fit",
            EventBody::FileIndexed { .. } => "file_indexed",
            EventBody::FileRemoved { .. } => "file_removed",
            EventBody::UserSkip { .. } => "user_skip",
            EventBody::AttemptsReset { .. } => "attempts_reset",
            EventBody::LlmExchange { .. } => "llm_exchange",
            EventBody::SessionClosed { .. } => "session_closed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp: String,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldError {
    #[error("event {found} out of order; expected seq {expected}")]
    Sequence { expected: u64, found: u64 },
    #[error("the session is closed")]
    Closed,
    #[error("the first event must create the session")]
    NotCreated,
    #[error("the session was already created")]
    AlreadyCreated,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

fn bad(msg: impl Into<String>) -> FoldError {
    FoldError::Inconsistent(msg.into())
}

/// In-memory session state. It is only ever changed by folding events, so
/// replaying a log reproduces it exactly.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    header: Option<SessionHeader>,
    spec: Option<Arc<PlanSpec>>,
    events: Vec<SessionEvent>,
    lines: Vec<String>,
    plan: Option<PlanState>,
    next: Option<NextSubtask>,
    context: ProjectContext,
    episodes: Vec<EpisodeTranscript>,
    ledger: CostLedger,
    recipe: Vec<TransformStep>,
    findings: Vec<(u64, Finding)>,
    models: Vec<ModelFit>,
    files: BTreeMap<String, FileEntry>,
    pending: Option<(u64, UserRequest)>,
    user_skips: BTreeSet<String>,
    status: SessionStatus,
}

impl Default for SessionRecord {
    fn default() -> Self {
        SessionRecord {
            header: None,
            spec: None,
            events: Vec::new(),
            lines: Vec::new(),
            plan: None,
            next: None,
            context: ProjectContext::new(),
            episodes: Vec::new(),
            ledger: CostLedger::default(),
            recipe: Vec::new(),
            findings: Vec::new(),
            models: Vec::new(),
            files: BTreeMap::new(),
            pending: None,
            user_skips: BTreeSet::new(),
            status: SessionStatus::Active,
        }
    }
}

pub fn freeform_subtask() -> SubtaskSpec {
    SubtaskSpec::new_mandatory(FREEFORM_SUBTASK, "Free-form turn", "Work on the user's request without a structured plan.")
}

impl SessionRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a session from log text, one event per line. The lines are
    /// kept verbatim.
    pub fn from_log(text: &str) -> Result<Self, FoldError> {
        let mut r = SessionRecord::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev: SessionEvent = serde_json::from_str(line).map_err(|e| FoldError::Parse { line: i + 1, message: e.to_string() })?;
            r.apply_line(line.to_string(), ev)?;
        }
        Ok(r)
    }

    /// Folds an event whose serialized form is `line`.
    pub fn apply_line(&mut self, line: String, event: SessionEvent) -> Result<(), FoldError> {
        self.apply(&event)?;
        self.events.push(event);
        self.lines.push(line);
        Ok(())
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    fn apply(&mut self, ev: &SessionEvent) -> Result<(), FoldError> {
        let expected = self.next_seq();
        if ev.seq != expected {
            return Err(FoldError::Sequence { expected, found: ev.seq });
        }
        if self.status != SessionStatus::Active {
            return Err(FoldError::Closed);
        }
        if self.header.is_none() && !matches!(ev.body, EventBody::SessionCreated(_)) {
            return Err(FoldError::NotCreated);
        }
        match &ev.body {
            EventBody::SessionCreated(h) => {
                if self.header.is_some() {
                    return Err(FoldError::AlreadyCreated);
                }
                let spec = Arc::new(load_plan(&h.plan_document)?);
                self.plan = Some(PlanState::with_max_attempts(spec.clone(), h.max_attempts));
                self.spec = Some(spec);
                self.header = Some((**h).clone());
            }
            EventBody::UserMessage { .. } => {
                if !matches!(self.pending, Some((_, UserRequest::Validation { .. }))) {
                    self.pending = None;
                }
            }
            EventBody::AssistantMessage { .. } | EventBody::LlmExchange { .. } | EventBody::DataDiff { .. } => {}
            EventBody::ToolReportRef { .. } | EventBody::ExecutionResultRef { .. } | EventBody::ReportGenerated { .. } => {}
            EventBody::EpisodeStarted { episode, subtask_id, category } => self.start_episode(*episode, subtask_id, *category)?,
            EventBody::Action { episode, step, action, rationale, forced, rejections } => {
                let t = self.open_episode(*episode)?;
                if t.steps.len() != *step {
                    return Err(bad(format!("action for step {step}, episode has {} steps", t.steps.len())));
                }
                if rejections.iter().any(|r| r.notice == VETO_NOTICE) {
                    t.veto_used = true;
                }
                let selected = Selected { action: action.clone(), rationale: rationale.clone(), forced: *forced, rejections: rejections.clone() };
                t.apply_action(&selected)?;
            }
            EventBody::Feedback { episode, step, source, raw } => {
                let config = self.header.as_ref().expect("created").episode_config.clone();
                let t = self.open_episode(*episode)?;
                let declared = t.steps.get(*step).and_then(|s| s.action.declared_feedback_source()).unwrap_or(*source);
                t.collect_feedback(&FeedbackRequest { step: *step, source: declared }, *source, raw, &config)?;
            }
            EventBody::EpisodeAborted { episode, diagnostic, rejections } => {
                let config = self.header.as_ref().expect("created").episode_config.clone();
                let t = self.open_episode(*episode)?;
                if rejections.iter().any(|r| r.notice == VETO_NOTICE) {
                    t.veto_used = true;
                }
                t.abort(diagnostic, &config);
                if matches!(self.pending, Some((_, UserRequest::Question { .. }))) {
                    self.pending = None;
                }
            }
            EventBody::EpisodeFinalized { episode, subtask_id, reward, .. } => {
                let t = self.open_episode(*episode)?;
                if &t.episode_type.subtask_id != subtask_id {
                    return Err(bad(format!("episode {episode} is for `{}`, not `{subtask_id}`", t.episode_type.subtask_id)));
                }
                t.finalize(*reward)?;
                let reward = t.reward.expect("finalized");
                let t = t.clone();
                self.ledger.record(&t);
                if subtask_id != FREEFORM_SUBTASK {
                    let plan = self.plan.as_ref().expect("created");
                    self.plan = Some(plan.record_episode_result(subtask_id, reward, *episode)?);
                }
                if matches!(self.pending, Some((_, UserRequest::Validation { .. }))) {
                    self.pending = None;
                }
            }
            EventBody::PlanUpdate { plan, next } => {
                let spec = self.spec.clone().expect("created");
                self.plan = Some(PlanState::restore(spec, plan.clone())?);
                self.next = Some(next.clone());
            }
            EventBody::QueryPending { request } => {
                if self.pending.is_some() {
                    return Err(bad("a user request is already pending"));
                }
                self.pending = Some((ev.seq, request.clone()));
            }
            EventBody::ContextUpdate { key, value } => self.context.set(key, value.clone())?,
            EventBody::Transform { step, .. } => self.recipe.push(step.clone()),
            EventBody::Finding { finding, .. } => self.findings.push((ev.seq, finding.clone())),
            EventBody::ModelFit(m) => self.models.push(m.clone()),
            EventBody::FileIndexed { path, hash, size } => {
                self.files.insert(path.clone(), FileEntry { hash: hash.clone(), size: *size, seq: ev.seq });
            }
            EventBody::FileRemoved { path } => {
                self.files.remove(path);
            }
            EventBody::UserSkip { subtask_id } => {
                let plan = self.plan.as_ref().expect("created");
                self.plan = Some(plan.user_skip(subtask_id)?);
                self.user_skips.insert(subtask_id.clone());
                self.pending = None;
            }
            EventBody::AttemptsReset { subtask_id } => {
                let plan = self.plan.as_ref().expect("created");
                self.plan = Some(plan.reset_attempts(subtask_id)?);
                self.pending = None;
            }
            EventBody::SessionClosed { status, .. } => {
                if *status == SessionStatus::Active {
                    return Err(bad("a session cannot be closed as active"));
                }
                self.status = *status;
                self.pending = None;
            }
        }
        Ok(())
    }

    fn start_episode(&mut self, index: u64, subtask_id: &str, category: EpisodeCategory) -> Result<(), FoldError> {
        if index != self.episodes.len() as u64 {
            return Err(bad(format!("episode {index} started, expected {}", self.episodes.len())));
        }
        if let Some(last) = self.episodes.last() {
            if !last.is_closed() {
                return Err(bad(format!("episode {} is still open", last.episode_index)));
            }
        }
        let header = self.header.as_ref().expect("created");
        let subtask = if subtask_id == FREEFORM_SUBTASK {
            if category != EpisodeCategory::Freeform {
                return Err(bad("free-form turns use the freeform category"));
            }
            freeform_subtask()
        } else {
            let spec = self.spec.as_ref().expect("created");
            let sub = spec.subtask(subtask_id).ok_or_else(|| PlanError::UnknownSubtask(subtask_id.to_string()))?.clone();
            let stage = spec.stage_index_of(subtask_id).expect("known subtask");
            let expected = EpisodeCategory::for_stage(&spec.stages[stage].name, stage);
            if category != expected {
                return Err(bad(format!("subtask `{subtask_id}` belongs to {expected}, not {category}")));
            }
            sub
        };
        let prior = match self.episodes.last() {
            None => Prior::Initial(StateText::initial(&header.problem_statement, &header.dataset_profile, header.episode_config.window_chars)),
            Some(prev) => prev.as_prior(),
        };
        let t = begin_episode(index, prior, &subtask, category)?;
        self.episodes.push(t);
        Ok(())
    }

    fn open_episode(&mut self, index: u64) -> Result<&mut EpisodeTranscript, FoldError> {
        match self.episodes.last_mut() {
            Some(t) if t.episode_index == index && t.status != EpisodeStatus::Closed => Ok(t),
            _ => Err(bad(format!("episode {index} is not the open episode"))),
        }
    }

    pub fn header(&self) -> Option<&SessionHeader> {
        self.header.as_ref()
    }

    pub fn session_id(&self) -> &str {
        self.header.as_ref().map_or("", |h| h.session_id.as_str())
    }

    pub fn spec(&self) -> Option<&Arc<PlanSpec>> {
        self.spec.as_ref()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// The log as written, one line per event.
    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn plan(&self) -> Option<&PlanState> {
        self.plan.as_ref()
    }

    /// The selection recorded by the last plan update.
    pub fn last_next(&self) -> Option<&NextSubtask> {
        self.next.as_ref()
    }

    /// What the plan would select now.
    pub fn next_subtask(&self) -> Option<NextSubtask> {
        self.plan.as_ref().map(|p| p.next_subtask(&self.context).1)
    }

    pub fn context(&self) -> &ProjectContext {
        &self.context
    }

    pub fn episodes(&self) -> &[EpisodeTranscript] {
        &self.episodes
    }

    pub fn current_episode(&self) -> Option<&EpisodeTranscript> {
        self.episodes.last().filter(|t| !t.is_closed())
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn recipe(&self) -> &[TransformStep] {
        &self.recipe
    }

    pub fn findings(&self) -> &[(u64, Finding)] {
        &self.findings
    }

    pub fn models(&self) -> &[ModelFit] {
        &self.models
    }

    pub fn files(&self) -> &BTreeMap<String, FileEntry> {
        &self.files
    }

    pub fn pending(&self) -> Option<&(u64, UserRequest)> {
        self.pending.as_ref()
    }

    pub fn user_skips(&self) -> &BTreeSet<String> {
        &self.user_skips
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn mode(&self) -> SessionMode {
        self.header.as_ref().map_or(SessionMode::Climb, |h| h.mode)
    }

    pub fn event(&self, seq: u64) -> Option<&SessionEvent> {
        if seq == 0 {
            return None;
        }
        self.events.get((seq - 1) as usize).filter(|e| e.seq == seq)
    }

    /// Events with a sequence number above `since`.
    pub fn events_since(&self, since: u64) -> &[SessionEvent] {
        let start = (since as usize).min(self.events.len());
        &self.events[start..]
    }

    /// All feedback entries, in log order.
    pub fn feedback_entries(&self) -> impl Iterator<Item = &Feedback> {
        self.episodes.iter().flat_map(|t| t.steps.iter().filter_map(|s| s.feedback.as_ref()))
    }
}
