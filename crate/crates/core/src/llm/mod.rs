//! Text-generation adapter for the reasoning policy: message structure,
//! prompt templates, context budgeting, self-reflection, and the scripted and
//! endpoint policies.

pub mod endpoint;
pub mod grammar;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reasoning::state::estimate_tokens;
use crate::reasoning::{ActionKind, EpisodeCategory, EpisodeTranscript, Feedback, FeedbackSource, StateText, StepEnv, Action};

pub use endpoint::{EndpointConfig, EndpointPolicy};
pub use grammar::{parse_action, render_action, ParseError};
pub use scripted::{ScriptEntry, ScriptedPolicy};

pub const PROMPT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Assistant,
    User,
    ToolResult,
    ExecutionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub pinned: bool,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into(), pinned: true }
    }

    pub fn new(role: Role, content: impl Into<String>, pinned: bool) -> Self {
        ChatMessage { role, content: content.into(), pinned: pinned || role == Role::System }
    }

    pub fn tokens(&self) -> usize {
        estimate_tokens(&self.content)
    }
}

/// An action kind the policy may choose this step, with a short description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllowedAction {
    pub kind: ActionKind,
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub allowed_actions: Vec<AllowedAction>,
    pub temperature: f64,
    pub max_output_tokens: usize,
}

impl GenerationRequest {
    pub fn token_estimate(&self) -> usize {
        self.messages.iter().map(ChatMessage::tokens).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("pinned messages need {pinned} tokens, over the budget of {budget}")]
    PinnedOverflow { pinned: usize, budget: usize },
}

/// Drops the oldest unpinned messages until the estimate fits `budget`
/// tokens. Order is preserved and pinned messages are never removed.
pub fn trim_context(messages: &[ChatMessage], budget: usize) -> Result<Vec<ChatMessage>, LlmError> {
    let pinned: usize = messages.iter().filter(|m| m.pinned).map(ChatMessage::tokens).sum();
    if pinned > budget {
        return Err(LlmError::PinnedOverflow { pinned, budget });
    }
    let mut total: usize = messages.iter().map(ChatMessage::tokens).sum();
    let mut keep = vec![true; messages.len()];
    for (i, m) in messages.iter().enumerate() {
        if total <= budget {
            break;
        }
        if !m.pinned {
            keep[i] = false;
            total -= m.tokens();
        }
    }
    Ok(messages.iter().zip(keep).filter(|(_, k)| *k).map(|(m, _)| m.clone()).collect())
}

pub fn prompt_template(category: EpisodeCategory) -> &'static str {
    match category {
        EpisodeCategory::AlignmentCheck => include_str!("../../resources/prompts/alignment_check.md"),
        EpisodeCategory::DataExploration => include_str!("../../resources/prompts/data_exploration.md"),
        EpisodeCategory::DataEngineering => include_str!("../../resources/prompts/data_engineering.md"),
        EpisodeCategory::ModelBuilding => include_str!("../../resources/prompts/model_building.md"),
        EpisodeCategory::ModelExploitation => include_str!("../../resources/prompts/model_exploitation.md"),
        EpisodeCategory::EndOfStudy => include_str!("../../resources/prompts/end_of_study.md"),
        EpisodeCategory::Freeform => include_str!("../../resources/prompts/freeform.md"),
    }
}

pub const COMMON_PROMPT: &str = include_str!("../../resources/prompts/common.md");
pub const REFLECT_PROMPT: &str = include_str!("../../resources/prompts/reflect.md");
pub const REPAIR_PROMPT: &str = include_str!("../../resources/prompts/repair.md");

/// What a policy sees when proposing an action.
pub struct PolicyInput<'a> {
    pub episode: &'a EpisodeTranscript,
    pub env: &'a StepEnv<'a>,
    /// Rejection notices from earlier proposals for this step.
    pub notices: &'a [String],
}

impl PolicyInput<'_> {
    pub fn subtask_id(&self) -> &str {
        &self.episode.episode_type.subtask_id
    }

    pub fn category(&self) -> EpisodeCategory {
        self.episode.episode_type.category
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub action: Action,
    pub rationale: Option<String>,
    /// Generated text the action was parsed from, if any.
    pub raw: Option<String>,
}

impl Proposal {
    pub fn new(action: Action) -> Self {
        Proposal { action, rationale: None, raw: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("endpoint error: {0}")]
    Transport(String),
    #[error("unparseable action after one repair attempt: {message}")]
    Parse { message: String, raw: String },
    #[error("script exhausted")]
    ScriptExhausted,
    #[error("expected {expected} in the script, found {found}")]
    ScriptMismatch { expected: String, found: String },
    #[error(transparent)]
    Context(#[from] LlmError),
    #[error("not supported by this policy")]
    Unsupported,
}

/// What self-reflection looks at: a code execution or a tool report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionSubject {
    pub kind: &'static str,
    pub succeeded: bool,
    /// First line of a tool narrative, or a short status line.
    pub headline: String,
    /// Raw result text: captured streams, tool narrative.
    pub body: String,
    /// Final line of an exception trace, if any.
    pub error_line: Option<String>,
}

pub trait ActionPolicy: Send {
    fn propose(&mut self, input: &PolicyInput<'_>) -> Result<Proposal, PolicyError>;

    /// One critique turn on an action's result.
    fn reflect(&mut self, _state: &StateText, _subject: &ReflectionSubject) -> Result<String, PolicyError> {
        Err(PolicyError::Unsupported)
    }

    /// Request/response records for the session log, secrets redacted.
    fn drain_exchanges(&mut self) -> Vec<serde_json::Value> {
        Vec::new()
    }
}

/// Status plus the final exception line (or the headline on success).
pub fn mechanical_summary(subject: &ReflectionSubject) -> String {
    let status = if subject.succeeded { "succeeded" } else { "failed" };
    let mut s = format!("The {} {status}.", subject.kind);
    match &subject.error_line {
        Some(line) => s.push_str(&format!(" Error: {line}")),
        None if !subject.headline.is_empty() => s.push_str(&format!(" {}", subject.headline)),
        None => {}
    }
    s
}

/// Raw result text followed by a critique.
pub fn with_body(subject: &ReflectionSubject, critique: &str) -> String {
    if subject.body.trim().is_empty() {
        format!("Reflection: {critique}")
    } else {
        format!("{}\n\nReflection: {critique}", subject.body.trim_end())
    }
}

/// Self-reflection feedback. The policy's reflection text is used verbatim;
/// if generation fails, the raw result plus the mechanical summary is used
/// instead. Always cost 0.
pub fn reflect(policy: &mut dyn ActionPolicy, state: &StateText, subject: &ReflectionSubject, max_chars: usize) -> Feedback {
    Feedback::new(FeedbackSource::SelfReflection, reflection_text(policy, state, subject), max_chars)
}

/// The untruncated text behind [`reflect`].
pub fn reflection_text(policy: &mut dyn ActionPolicy, state: &StateText, subject: &ReflectionSubject) -> String {
    policy.reflect(state, subject).unwrap_or_else(|_| with_body(subject, &mechanical_summary(subject)))
}

fn allowed_actions(input: &PolicyInput<'_>) -> Vec<AllowedAction> {
    let tools: Vec<&str> = input.env.available_tools.iter().map(|d| d.name.as_str()).collect();
    vec![
        AllowedAction { kind: ActionKind::GenerateText, doc: "Reason or report in prose; optionally record facts in the project memory.".into() },
        AllowedAction { kind: ActionKind::GenerateCode, doc: "Run a Python cell in the working directory.".into() },
        AllowedAction { kind: ActionKind::InvokeTool, doc: format!("Invoke one of: {}.", if tools.is_empty() { "none".into() } else { tools.join(", ") }) },
        AllowedAction { kind: ActionKind::QueryUser, doc: "Ask the user (costly; only for what only they know).".into() },
        AllowedAction { kind: ActionKind::Stop, doc: "End this subtask.".into() },
    ]
}

fn role_of_block(block: &str) -> Role {
    if block.contains("[feedback: tool]") {
        Role::ToolResult
    } else if block.contains("[feedback: self_reflection]") {
        Role::ExecutionResult
    } else if block.contains("[feedback: user]") {
        Role::User
    } else {
        Role::Assistant
    }
}

/// Builds the in-context structure: pinned system prompt, problem header
/// and plan progress; the state's rolling blocks; pinned notices.
pub fn build_request(input: &PolicyInput<'_>, temperature: f64, max_output_tokens: usize) -> GenerationRequest {
    let env = input.env;
    let mut system = format!("{COMMON_PROMPT}\n{}", prompt_template(input.category()));
    system.push_str("\nAvailable tools:\n");
    for d in env.available_tools {
        let params: Vec<String> = d.param_schema.iter().map(|p| format!("{}{}", p.name, if p.required { "" } else { "?" })).collect();
        system.push_str(&format!("- {}({}): {}\n", d.name, params.join(", "), d.doc));
    }
    let state = input.episode.current_state();
    let mut messages = vec![ChatMessage::system(system), ChatMessage::new(Role::User, state.header().to_string(), true)];
    messages.push(ChatMessage::new(
        Role::User,
        format!(
            "Plan progress:\n{}\n\nProject memory:\n{}\n\nCurrent subtask: {} ({})\n{}",
            env.plan_summary,
            env.context_summary,
            env.subtask.name,
            env.subtask.id,
            env.subtask.description
        ),
        true,
    ));
    for b in state.blocks() {
        messages.push(ChatMessage::new(role_of_block(b), b.to_string(), false));
    }
    for n in input.notices {
        messages.push(ChatMessage::new(Role::User, format!("Notice: {n}"), true));
    }
    GenerationRequest { messages, allowed_actions: allowed_actions(input), temperature, max_output_tokens }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str, pinned: bool) -> ChatMessage {
        ChatMessage::new(Role::User, s, pinned)
    }

    #[test]
    fn trim_identity_under_budget() {
        let msgs = vec![m("aaaa", true), m("bbbb", false)];
        assert_eq!(trim_context(&msgs, 10).unwrap(), msgs);
    }

    #[test]
    fn trim_keeps_newest_unpinned() {
        let mut msgs = vec![m("system", true)];
        for i in 0..10 {
            msgs.push(m(&format!("msg{i:05}"), false));
        }
        let pinned = msgs[0].tokens();
        let per = msgs[1].tokens();
        let out = trim_context(&msgs, pinned + 4 * per).unwrap();
        let names: Vec<&str> = out.iter().map(|x| x.content.as_str()).collect();
        assert_eq!(names, vec!["system", "msg00006", "msg00007", "msg00008", "msg00009"]);
    }

    #[test]
    fn trim_pinned_overflow() {
        assert!(trim_context(&[m(&"x".repeat(100), true)], 5).is_err());
    }

    #[test]
    fn mechanical_summary_keeps_final_line() {
        let s = ReflectionSubject {
            kind: "code cell",
            succeeded: false,
            headline: String::new(),
            body: "Traceback...\nZeroDivisionError: division by zero".into(),
            error_line: Some("ZeroDivisionError: division by zero".into()),
        };
        let fb = reflect(&mut ScriptedPolicy::new(vec![]), &StateText::initial("p", "d", 1000), &s, 8000);
        assert_eq!(fb.cost, 0);
        assert!(fb.text.contains("ZeroDivisionError: division by zero"));
        assert_eq!(fb.source, FeedbackSource::SelfReflection);
    }
}
