//! Episodes: one attempt at a plan subtask, run as a sequence of actions
//! ending in `stop` and judged by a binary reward from the user.

pub mod state;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ActionPolicy, PolicyInput};
use crate::plan::{Reward, SubtaskSpec};
use crate::tools::ToolDescriptor;

pub use state::{estimate_tokens, truncate_middle, truncate_tail, Feedback, FeedbackSource, StateText};

pub const DEFAULT_L_MAX: usize = 25;
pub const DEFAULT_FEEDBACK_MAX_CHARS: usize = 8_000;
pub const DEFAULT_WINDOW_CHARS: usize = 24_000;

pub const VETO_NOTICE: &str = "query_user rejected: try autonomous sources first (tools, code, reasoning) \
and ask the user only for what they alone can provide.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeCategory {
    AlignmentCheck,
    DataExploration,
    DataEngineering,
    ModelBuilding,
    ModelExploitation,
    EndOfStudy,
    /// Unstructured turns in baseline mode.
    Freeform,
}

impl EpisodeCategory {
    pub const PLANNED: [EpisodeCategory; 6] = [
        EpisodeCategory::AlignmentCheck,
        EpisodeCategory::DataExploration,
        EpisodeCategory::DataEngineering,
        EpisodeCategory::ModelBuilding,
        EpisodeCategory::ModelExploitation,
        EpisodeCategory::EndOfStudy,
    ];

    /// Category of a plan stage, by name, falling back to position.
    pub fn for_stage(name: &str, index: usize) -> Self {
        let n = name.to_ascii_lowercase();
        if n.contains("alignment") {
            EpisodeCategory::AlignmentCheck
        } else if n.contains("exploration") {
            EpisodeCategory::DataExploration
        } else if n.contains("engineering") {
            EpisodeCategory::DataEngineering
        } else if n.contains("building") {
            EpisodeCategory::ModelBuilding
        } else if n.contains("exploitation") {
            EpisodeCategory::ModelExploitation
        } else if n.contains("end") {
            EpisodeCategory::EndOfStudy
        } else {
            Self::PLANNED[index.min(Self::PLANNED.len() - 1)]
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeCategory::AlignmentCheck => "alignment_check",
            EpisodeCategory::DataExploration => "data_exploration",
            EpisodeCategory::DataEngineering => "data_engineering",
            EpisodeCategory::ModelBuilding => "model_building",
            EpisodeCategory::ModelExploitation => "model_exploitation",
            EpisodeCategory::EndOfStudy => "end_of_study",
            EpisodeCategory::Freeform => "freeform",
        }
    }
}

impl fmt::Display for EpisodeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeType {
    pub subtask_id: String,
    pub category: EpisodeCategory,
}

/// An action chosen by the policy. The JSON form (tagged by `kind`) is also
/// the grammar the policy answers in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    GenerateText {
        text: String,
        /// Facts to store in the project memory.
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        context: BTreeMap<String, serde_json::Value>,
    },
    GenerateCode {
        code: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        dependencies: Vec<String>,
    },
    InvokeTool {
        tool: String,
        #[serde(default = "empty_object")]
        params: serde_json::Value,
    },
    QueryUser {
        prompt: String,
        /// Project-memory key the answer should be stored under.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context_key: Option<String>,
    },
    Stop,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    GenerateText,
    GenerateCode,
    InvokeTool,
    QueryUser,
    Stop,
}

impl Action {
    pub fn text(text: impl Into<String>) -> Self {
        Action::GenerateText { text: text.into(), context: BTreeMap::new() }
    }

    pub fn code(code: impl Into<String>) -> Self {
        Action::GenerateCode { code: code.into(), dependencies: Vec::new() }
    }

    pub fn tool(tool: impl Into<String>, params: serde_json::Value) -> Self {
        Action::InvokeTool { tool: tool.into(), params }
    }

    pub fn query(prompt: impl Into<String>) -> Self {
        Action::QueryUser { prompt: prompt.into(), context_key: None }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::GenerateText { .. } => ActionKind::GenerateText,
            Action::GenerateCode { .. } => ActionKind::GenerateCode,
            Action::InvokeTool { .. } => ActionKind::InvokeTool,
            Action::QueryUser { .. } => ActionKind::QueryUser,
            Action::Stop => ActionKind::Stop,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop)
    }

    /// Where the feedback for this action comes from. `None` for stop.
    pub fn declared_feedback_source(&self) -> Option<FeedbackSource> {
        match self {
            Action::GenerateText { .. } | Action::GenerateCode { .. } => Some(FeedbackSource::SelfReflection),
            Action::InvokeTool { .. } => Some(FeedbackSource::Tool),
            Action::QueryUser { .. } => Some(FeedbackSource::User),
            Action::Stop => None,
        }
    }

    /// One-line description used in state step blocks.
    pub fn summary_line(&self) -> String {
        match self {
            Action::GenerateText { text, .. } => {
                let first = text.lines().next().unwrap_or("");
                format!("generate_text: {}", truncate_middle(first, 160).0)
            }
            Action::GenerateCode { code, .. } => {
                format!("generate_code:\n```python\n{}\n```", truncate_middle(code.trim_end(), 2_000).0)
            }
            Action::InvokeTool { tool, params } => format!("invoke_tool {tool} {params}"),
            Action::QueryUser { prompt, .. } => format!("query_user: {prompt}"),
            Action::Stop => "stop".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub feedback: Option<Feedback>,
    /// Stop substituted by the engine (step limit or abort).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Open,
    AwaitingFeedback,
    Stopped,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub episode_index: u64,
    #[serde(rename = "type")]
    pub episode_type: EpisodeType,
    pub subtask_name: String,
    #[serde(default)]
    pub requires_user: bool,
    pub steps: Vec<Step>,
    pub initial_state: StateText,
    pub final_state: StateText,
    pub reward: Option<Reward>,
    pub total_cost: u32,
    pub status: EpisodeStatus,
    #[serde(default)]
    pub veto_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

/// What an episode starts from.
#[derive(Debug, Clone)]
pub enum Prior {
    /// Problem statement and dataset profile, for the first episode.
    Initial(StateText),
    Previous { final_state: StateText, reward: Option<Reward>, episode_index: u64, subtask_name: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasoningError {
    #[error("episode {0} needs the previous episode's final state and reward")]
    MissingPrior(u64),
    #[error("the first episode must start from the initial input")]
    UnexpectedPrior,
    #[error("episode is not open for action selection (status {0:?})")]
    NotOpen(EpisodeStatus),
    #[error("no feedback is pending for step {0}")]
    NoPendingFeedback(usize),
    #[error("episode cannot be finalized before stop (status {0:?})")]
    NotStopped(EpisodeStatus),
}

/// Episode limits and guardrails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub l_max: usize,
    #[serde(default)]
    pub l_max_by_category: BTreeMap<EpisodeCategory, usize>,
    pub feedback_max_chars: usize,
    pub window_chars: usize,
    /// Reject the first premature user query of an episode.
    pub veto_user_queries: bool,
    /// Reject tools outside the category's availability set.
    pub enforce_tool_availability: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            l_max: DEFAULT_L_MAX,
            l_max_by_category: BTreeMap::new(),
            feedback_max_chars: DEFAULT_FEEDBACK_MAX_CHARS,
            window_chars: DEFAULT_WINDOW_CHARS,
            veto_user_queries: true,
            enforce_tool_availability: true,
        }
    }
}

impl EpisodeConfig {
    /// Guardrails off, as in baseline mode.
    pub fn unguarded() -> Self {
        EpisodeConfig { veto_user_queries: false, enforce_tool_availability: false, ..Self::default() }
    }

    pub fn l_max_for(&self, category: EpisodeCategory) -> usize {
        self.l_max_by_category.get(&category).copied().unwrap_or(self.l_max)
    }
}

/// What the engine needs from its surroundings to select an action.
pub struct StepEnv<'a> {
    pub subtask: &'a SubtaskSpec,
    pub available_tools: &'a [ToolDescriptor],
    /// Plan progress, pinned in the generation context.
    pub plan_summary: &'a str,
    pub context_summary: &'a str,
    pub config: &'a EpisodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub action: Action,
    pub notice: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub action: Action,
    pub rationale: Option<String>,
    pub forced: bool,
    pub rejections: Vec<Rejection>,
}

/// Selection failed; the episode must be aborted with this diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAbort {
    pub diagnostic: String,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub step: usize,
    pub source: FeedbackSource,
}

pub fn begin_episode(
    episode_index: u64,
    prior: Prior,
    subtask: &SubtaskSpec,
    category: EpisodeCategory,
) -> Result<EpisodeTranscript, ReasoningError> {
    let initial_state = match (episode_index, prior) {
        (0, Prior::Initial(state)) => state,
        (0, Prior::Previous { .. }) => return Err(ReasoningError::UnexpectedPrior),
        (rho, Prior::Initial(_)) => return Err(ReasoningError::MissingPrior(rho)),
        (rho, Prior::Previous { reward: None, .. }) => return Err(ReasoningError::MissingPrior(rho)),
        (_, Prior::Previous { final_state, reward: Some(r), episode_index: prev, subtask_name }) => {
            final_state.with_block(StateText::reward_block(prev, &subtask_name, r))
        }
    };
    Ok(EpisodeTranscript {
        episode_index,
        episode_type: EpisodeType { subtask_id: subtask.id.clone(), category },
        subtask_name: subtask.name.clone(),
        requires_user: subtask.requires_user,
        steps: Vec::new(),
        final_state: initial_state.clone(),
        initial_state,
        reward: None,
        total_cost: 0,
        status: EpisodeStatus::Open,
        veto_used: false,
        aborted: None,
    })
}

impl EpisodeTranscript {
    pub fn continuation_count(&self) -> usize {
        self.steps.iter().filter(|s| !s.action.is_stop()).count()
    }

    pub fn user_query_count(&self) -> usize {
        self.steps.iter().filter(|s| s.feedback.as_ref().is_some_and(|f| f.source == FeedbackSource::User)).count()
    }

    /// Whether any step so far used a cost-free source.
    pub fn has_autonomous_step(&self) -> bool {
        self.steps.iter().any(|s| s.action.declared_feedback_source().is_some_and(|src| src != FeedbackSource::User))
    }

    pub fn current_state(&self) -> &StateText {
        &self.final_state
    }

    pub fn is_closed(&self) -> bool {
        self.status == EpisodeStatus::Closed
    }

    /// Picks the next action: the policy's proposal, subject to the step
    /// limit, the premature-query veto and tool availability.
    pub fn select_action(
        &mut self,
        policy: &mut dyn ActionPolicy,
        env: &StepEnv<'_>,
    ) -> Result<Result<Selected, SelectionAbort>, ReasoningError> {
        if self.status != EpisodeStatus::Open {
            return Err(ReasoningError::NotOpen(self.status));
        }
        let l_max = env.config.l_max_for(self.episode_type.category);
        if self.continuation_count() >= l_max {
            return Ok(Ok(Selected { action: Action::Stop, rationale: None, forced: true, rejections: Vec::new() }));
        }
        let mut notices: Vec<String> = Vec::new();
        let mut rejections = Vec::new();
        let mut unavailable = 0;
        loop {
            let input = PolicyInput { episode: self, env, notices: &notices };
            let proposal = match policy.propose(&input) {
                Ok(p) => p,
                Err(e) => {
                    return Ok(Err(SelectionAbort { diagnostic: format!("policy failure: {e}"), rejections }));
                }
            };
            match &proposal.action {
                Action::QueryUser { .. }
                    if env.config.veto_user_queries
                        && !env.subtask.requires_user
                        && !self.veto_used
                        && !self.has_autonomous_step() =>
                {
                    self.veto_used = true;
                    rejections.push(Rejection { action: proposal.action.clone(), notice: VETO_NOTICE.into() });
                    notices.push(VETO_NOTICE.into());
                }
                Action::InvokeTool { tool, .. }
                    if env.config.enforce_tool_availability && !env.available_tools.iter().any(|d| &d.name == tool) =>
                {
                    unavailable += 1;
                    let names: Vec<&str> = env.available_tools.iter().map(|d| d.name.as_str()).collect();
                    let notice = format!(
                        "tool `{tool}` is not available for {} episodes; available tools: {}",
                        self.episode_type.category,
                        if names.is_empty() { "none".to_string() } else { names.join(", ") }
                    );
                    rejections.push(Rejection { action: proposal.action.clone(), notice: notice.clone() });
                    if unavailable >= 2 {
                        return Ok(Err(SelectionAbort {
                            diagnostic: format!("episode aborted: {notice} (proposed again after a rejection)"),
                            rejections,
                        }));
                    }
                    notices.push(notice);
                }
                _ => {
                    return Ok(Ok(Selected {
                        action: proposal.action,
                        rationale: proposal.rationale,
                        forced: false,
                        rejections,
                    }))
                }
            }
        }
    }

    /// Records the action. Returns the feedback request for continuation
    /// actions and `None` for stop.
    pub fn apply_action(&mut self, selected: &Selected) -> Result<Option<FeedbackRequest>, ReasoningError> {
        if self.status != EpisodeStatus::Open {
            return Err(ReasoningError::NotOpen(self.status));
        }
        let t = self.steps.len();
        self.steps.push(Step {
            t,
            action: selected.action.clone(),
            rationale: selected.rationale.clone(),
            feedback: None,
            forced: selected.forced,
        });
        match selected.action.declared_feedback_source() {
            None => {
                self.status = EpisodeStatus::Stopped;
                Ok(None)
            }
            Some(source) => {
                self.status = EpisodeStatus::AwaitingFeedback;
                Ok(Some(FeedbackRequest { step: t, source }))
            }
        }
    }

    /// Attaches feedback to the pending step and applies the transition.
    /// `source` may differ from the request when a dispatch failure is
    /// reported by the engine as tool feedback.
    pub fn collect_feedback(
        &mut self,
        request: &FeedbackRequest,
        source: FeedbackSource,
        raw: &str,
        config: &EpisodeConfig,
    ) -> Result<Feedback, ReasoningError> {
        if self.status != EpisodeStatus::AwaitingFeedback || self.steps.len() != request.step + 1 {
            return Err(ReasoningError::NoPendingFeedback(request.step));
        }
        let feedback = Feedback::new(source, raw, config.feedback_max_chars);
        let step = self.steps.last_mut().expect("pending step");
        self.final_state = self.final_state.transition(step.t, &step.action.summary_line(), &feedback);
        step.feedback = Some(feedback.clone());
        self.total_cost += feedback.cost;
        self.status = EpisodeStatus::Open;
        Ok(feedback)
    }

    /// Ends the episode early with a diagnostic; the reward will be 0.
    pub fn abort(&mut self, diagnostic: &str, config: &EpisodeConfig) {
        if self.status == EpisodeStatus::Closed {
            return;
        }
        if self.status == EpisodeStatus::AwaitingFeedback {
            let t = self.steps.len() - 1;
            let req = FeedbackRequest { step: t, source: FeedbackSource::Tool };
            let _ = self.collect_feedback(&req, FeedbackSource::Tool, diagnostic, config);
        }
        if self.status == EpisodeStatus::Open {
            let t = self.steps.len();
            let feedback = Feedback::new(FeedbackSource::Tool, diagnostic, config.feedback_max_chars);
            self.final_state = self.final_state.transition(t, "stop (aborted)", &feedback);
            self.steps.push(Step { t, action: Action::Stop, rationale: None, feedback: Some(feedback), forced: true });
        }
        self.status = EpisodeStatus::Stopped;
        self.aborted = Some(diagnostic.to_string());
    }

    pub fn finalize(&mut self, reward: Reward) -> Result<(), ReasoningError> {
        if self.status != EpisodeStatus::Stopped {
            return Err(ReasoningError::NotStopped(self.status));
        }
        self.reward = Some(if self.aborted.is_some() { Reward::Zero } else { reward });
        self.status = EpisodeStatus::Closed;
        Ok(())
    }

    /// Prior for the episode that follows this closed one.
    pub fn as_prior(&self) -> Prior {
        Prior::Previous {
            final_state: self.final_state.clone(),
            reward: self.reward,
            episode_index: self.episode_index,
            subtask_name: self.subtask_name.clone(),
        }
    }
}

/// Human-interaction cost per episode and in total.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub per_episode: BTreeMap<u64, u32>,
    pub total: u32,
}

impl CostLedger {
    pub fn record(&mut self, transcript: &EpisodeTranscript) {
        let cost: u32 = transcript.steps.iter().filter_map(|s| s.feedback.as_ref()).map(|f| f.cost).sum();
        if let Some(old) = self.per_episode.insert(transcript.episode_index, cost) {
            self.total -= old;
        }
        self.total += cost;
    }

    pub fn episode(&self, index: u64) -> u32 {
        self.per_episode.get(&index).copied().unwrap_or(0)
    }
}
