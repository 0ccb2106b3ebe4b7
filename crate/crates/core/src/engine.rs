//! The orchestration loop. It changes a session only by appending events,
//! so whatever it does can be replayed from the log.

use std::path::Path;

use thiserror::Error;

use crate::codeexec::{self, CodeCell, ExecConfig, ExecutionResult};
use crate::llm::{reflection_text, ActionPolicy, ReflectionSubject};
use crate::plan::{CtxValue, NextSubtask, ProjectContext, Reward, SubtaskSpec};
use crate::reasoning::{Action, EpisodeCategory, EpisodeStatus, FeedbackSource, ReasoningError, StepEnv};
use crate::session::report::{render_report, REPORT_FILE};
use crate::session::store::{Blobs, StoreError};
use crate::session::{
    compute_data_diff, freeform_subtask, EventBody, LiveSession, ModelFit, SessionMode, SessionRecord, SessionStatus, UserRequest,
    FREEFORM_SUBTASK,
};
use crate::tools::{Frame, ToolContext, ToolRegistry};

/// Hard cap on episodes per run, guarding against a policy that never ends.
pub const DEFAULT_MAX_EPISODES: u64 = 400;
pub const INTERRUPTED_DIAGNOSTIC: &str = "the session was interrupted before this episode finished";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Reasoning(#[from] ReasoningError),
    #[error("session has not been created")]
    NoSession,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserReply {
    Answer(String),
    Validate { approved: bool, comment: Option<String> },
    Skip,
    Retry,
    /// Ends the session with this diagnostic.
    Abort(String),
}

/// Where answers to user requests come from.
pub trait UserChannel: Send {
    fn reply(&mut self, request: &UserRequest, record: &SessionRecord) -> UserReply;

    /// Called once the engine has recorded the effects of the last reply.
    fn handled(&mut self) {}
}

pub trait CellExecutor: Send {
    fn run(&mut self, cell: &CodeCell, workdir: &Path) -> ExecutionResult;
}

#[derive(Debug, Clone, Default)]
pub struct PythonExecutor(pub ExecConfig);

impl CellExecutor for PythonExecutor {
    fn run(&mut self, cell: &CodeCell, workdir: &Path) -> ExecutionResult {
        codeexec::execute(cell, workdir, &self.0)
    }
}

enum Flow {
    Continue,
    Abort(String),
}

pub struct Engine {
    session: LiveSession,
    policy: Box<dyn ActionPolicy>,
    user: Box<dyn UserChannel>,
    tools: ToolRegistry,
    executor: Box<dyn CellExecutor>,
    pub max_episodes: u64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("session", &self.session).finish_non_exhaustive()
    }
}

fn plan_summary(record: &SessionRecord) -> String {
    let Some(plan) = record.plan() else {
        return String::new();
    };
    let p = plan.progress_snapshot();
    let mut s = format!("Plan progress: {} completed, {} skipped, {} pending.\n", p.completed, p.skipped, p.pending);
    for st in &p.stages {
        s.push_str(&format!("- {}: {}/{} done\n", st.name, st.completed, st.subtasks.len()));
    }
    s
}

fn context_summary(ctx: &ProjectContext) -> String {
    ctx.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join("\n")
}

fn is_yes(text: &str) -> bool {
    let t = text.trim().to_ascii_lowercase();
    ["y", "yes", "ok", "approve", "approved", "accept", "1", "true"].iter().any(|w| t == *w || t.starts_with(&format!("{w} ")) || t.starts_with(&format!("{w},")))
}

impl Engine {
    pub fn new(session: LiveSession, policy: Box<dyn ActionPolicy>, user: Box<dyn UserChannel>) -> Self {
        Engine {
            session,
            policy,
            user,
            tools: ToolRegistry::with_native_tools(),
            executor: Box::new(PythonExecutor::default()),
            max_episodes: DEFAULT_MAX_EPISODES,
        }
    }

    pub fn with_tools(mut self, tools: ToolRegistry) -> Self {
        self.tools = tools;
        self
    }

    pub fn with_executor(mut self, executor: Box<dyn CellExecutor>) -> Self {
        self.executor = executor;
        self
    }

    pub fn session(&self) -> &LiveSession {
        &self.session
    }

    pub fn into_session(self) -> LiveSession {
        self.session
    }

    fn record(&self) -> std::sync::RwLockReadGuard<'_, SessionRecord> {
        self.session.record()
    }

    fn append(&mut self, body: EventBody) -> Result<u64, EngineError> {
        Ok(self.session.append(body)?.seq)
    }

    fn drain_exchanges(&mut self) -> Result<(), EngineError> {
        for exchange in self.policy.drain_exchanges() {
            self.append(EventBody::LlmExchange { exchange })?;
        }
        Ok(())
    }

    /// Records a request (unless it is already the pending one) and waits
    /// for the reply.
    fn ask(&mut self, request: UserRequest) -> Result<(u64, UserReply), EngineError> {
        let existing = self.record().pending().filter(|(_, r)| *r == request).map(|(s, _)| *s);
        let seq = match existing {
            Some(s) => s,
            None => self.append(EventBody::QueryPending { request: request.clone() })?,
        };
        // Only the engine writes, so holding the read lock while the user
        // thinks blocks nobody.
        let reply = {
            let rec = self.session.shared();
            let rec = rec.read().expect("session lock");
            self.user.reply(&request, &rec)
        };
        Ok((seq, reply))
    }

    fn set_context(&mut self, key: &str, value: CtxValue) -> Result<Result<(), String>, EngineError> {
        let mut probe = self.record().context().clone();
        if let Err(e) = probe.set(key, value.clone()) {
            return Ok(Err(e.to_string()));
        }
        if self.record().context().get(key) != Some(&value) {
            self.append(EventBody::ContextUpdate { key: key.into(), value })?;
        }
        Ok(Ok(()))
    }

    fn close(&mut self, status: SessionStatus, diagnostic: Option<String>) -> Result<SessionStatus, EngineError> {
        let forced = status != SessionStatus::Completed;
        self.write_report(forced)?;
        self.append(EventBody::SessionClosed { status, diagnostic })?;
        Ok(status)
    }

    fn write_report(&mut self, forced: bool) -> Result<(), EngineError> {
        let text = render_report(&self.record(), self.session.blobs());
        std::fs::write(self.session.workdir().join(REPORT_FILE), &text).map_err(StoreError::from)?;
        let hash = self.session.put_blob(text.as_bytes())?;
        self.session.index_files()?;
        self.append(EventBody::ReportGenerated { path: REPORT_FILE.into(), hash, forced })?;
        Ok(())
    }

    /// Runs the session until it is closed. Safe to call on a resumed
    /// session: an episode cut off mid-way is aborted first.
    pub fn run(&mut self) -> Result<SessionStatus, EngineError> {
        if self.record().header().is_none() {
            return Err(EngineError::NoSession);
        }
        if self.record().status() != SessionStatus::Active {
            return Ok(self.record().status());
        }
        if let Flow::Abort(d) = self.recover()? {
            return self.close(SessionStatus::Aborted, Some(d));
        }
        let mode = self.record().mode();
        match mode {
            SessionMode::Climb => self.run_climb(),
            SessionMode::Baseline => self.run_baseline(),
        }
    }

    fn recover(&mut self) -> Result<Flow, EngineError> {
        let Some(t) = self.record().current_episode().cloned() else {
            return Ok(Flow::Continue);
        };
        if matches!(t.status, EpisodeStatus::Open | EpisodeStatus::AwaitingFeedback) {
            self.append(EventBody::EpisodeAborted { episode: t.episode_index, diagnostic: INTERRUPTED_DIAGNOSTIC.into(), rejections: Vec::new() })?;
        }
        self.checkpoint(t.episode_index)
    }

    fn run_climb(&mut self) -> Result<SessionStatus, EngineError> {
        loop {
            if self.record().episodes().len() as u64 >= self.max_episodes {
                return self.close(SessionStatus::Aborted, Some(format!("episode limit of {} reached", self.max_episodes)));
            }
            let (plan, next) = {
                let rec = self.record();
                rec.plan().expect("created").next_subtask(rec.context())
            };
            let changed = self.record().plan() != Some(&plan) || self.record().last_next() != Some(&next);
            if changed {
                self.append(EventBody::PlanUpdate { plan: plan.data(), next: next.clone() })?;
            }
            let flow = match next {
                NextSubtask::Done => return self.close(SessionStatus::Completed, None),
                NextSubtask::Run { id } => self.run_episode(&id)?,
                NextSubtask::AwaitingContext { subtask_ids, missing_keys } => self.ask_context(subtask_ids, &missing_keys[0])?,
                NextSubtask::AttemptsExhausted { id } => self.ask_exhausted(&id)?,
            };
            if let Flow::Abort(d) = flow {
                return self.close(SessionStatus::Aborted, Some(d));
            }
        }
    }

    fn run_baseline(&mut self) -> Result<SessionStatus, EngineError> {
        loop {
            if self.record().episodes().len() as u64 >= self.max_episodes {
                return self.close(SessionStatus::Aborted, Some(format!("episode limit of {} reached", self.max_episodes)));
            }
            let index = self.record().episodes().len() as u64;
            self.append(EventBody::EpisodeStarted { episode: index, subtask_id: FREEFORM_SUBTASK.into(), category: EpisodeCategory::Freeform })?;
            if let Flow::Abort(d) = self.episode_steps(index, &freeform_subtask())? {
                self.append(EventBody::EpisodeFinalized { episode: index, subtask_id: FREEFORM_SUBTASK.into(), reward: Reward::Zero, comment: None })?;
                return self.close(SessionStatus::Aborted, Some(d));
            }
            let t = self.record().episodes().last().cloned().expect("started");
            self.append(EventBody::EpisodeFinalized {
                episode: index,
                subtask_id: FREEFORM_SUBTASK.into(),
                reward: Reward::One,
                comment: Some("no checkpoint in free-form mode".into()),
            })?;
            // A turn that stops at once means the policy considers itself done.
            if t.steps.len() == 1 && t.aborted.is_none() && t.steps[0].action.is_stop() {
                return self.close(SessionStatus::Completed, None);
            }
            if t.aborted.as_deref().is_some_and(|d| d.starts_with("policy failure")) {
                return self.close(SessionStatus::Aborted, t.aborted.clone());
            }
        }
    }

    fn ask_context(&mut self, subtask_ids: Vec<String>, key: &str) -> Result<Flow, EngineError> {
        let prompt = format!("Before continuing, please provide `{key}` (needed to decide whether to run: {}).", subtask_ids.join(", "));
        let (seq, reply) = self.ask(UserRequest::Context { subtask_ids: subtask_ids.clone(), key: key.into(), prompt })?;
        let flow = match reply {
            UserReply::Answer(text) => {
                self.append(EventBody::UserMessage { text: text.clone(), reply_to: Some(seq) })?;
                if let Ok(v) = CtxValue::parse_for(key, &text) {
                    self.set_context(key, v)?.ok();
                }
                Flow::Continue
            }
            UserReply::Skip => {
                for id in subtask_ids {
                    self.append(EventBody::UserSkip { subtask_id: id })?;
                }
                Flow::Continue
            }
            UserReply::Abort(d) => Flow::Abort(d),
            UserReply::Validate { .. } | UserReply::Retry => Flow::Continue,
        };
        self.user.handled();
        Ok(flow)
    }

    fn ask_exhausted(&mut self, id: &str) -> Result<Flow, EngineError> {
        let attempts = self.record().plan().and_then(|p| p.record(id)).map_or(0, |r| r.attempts);
        let (seq, reply) = self.ask(UserRequest::AttemptsExhausted { subtask_id: id.into(), attempts })?;
        let reply = match reply {
            UserReply::Answer(text) => {
                self.append(EventBody::UserMessage { text: text.clone(), reply_to: Some(seq) })?;
                match text.trim().to_ascii_lowercase().as_str() {
                    "skip" => UserReply::Skip,
                    "retry" => UserReply::Retry,
                    "abort" => UserReply::Abort("aborted by the user".into()),
                    _ => {
                        self.user.handled();
                        return Ok(Flow::Continue);
                    }
                }
            }
            other => other,
        };
        let flow = match reply {
            UserReply::Skip => {
                self.append(EventBody::UserSkip { subtask_id: id.into() })?;
                Flow::Continue
            }
            UserReply::Retry => {
                self.append(EventBody::AttemptsReset { subtask_id: id.into() })?;
                Flow::Continue
            }
            UserReply::Abort(d) => Flow::Abort(d),
            _ => Flow::Continue,
        };
        self.user.handled();
        Ok(flow)
    }

    fn run_episode(&mut self, id: &str) -> Result<Flow, EngineError> {
        let (subtask, category, index) = {
            let rec = self.record();
            let spec = rec.spec().expect("created");
            let sub = spec.subtask(id).expect("plan selects known subtasks").clone();
            let stage = spec.stage_index_of(id).expect("known subtask");
            (sub, EpisodeCategory::for_stage(&spec.stages[stage].name, stage), rec.episodes().len() as u64)
        };
        self.append(EventBody::EpisodeStarted { episode: index, subtask_id: id.into(), category })?;
        if let Flow::Abort(d) = self.episode_steps(index, &subtask)? {
            self.append(EventBody::EpisodeFinalized { episode: index, subtask_id: id.into(), reward: Reward::Zero, comment: None })?;
            return Ok(Flow::Abort(d));
        }
        self.checkpoint(index)
    }

    /// Terminal reward for a stopped episode. Aborted episodes score 0
    /// without bothering the user.
    fn checkpoint(&mut self, index: u64) -> Result<Flow, EngineError> {
        let t = self.record().current_episode().cloned().expect("stopped episode");
        let subtask_id = t.episode_type.subtask_id.clone();
        if let Some(diag) = &t.aborted {
            self.append(EventBody::EpisodeFinalized { episode: index, subtask_id, reward: Reward::Zero, comment: Some(diag.clone()) })?;
            return Ok(Flow::Continue);
        }
        if subtask_id == FREEFORM_SUBTASK {
            self.append(EventBody::EpisodeFinalized { episode: index, subtask_id, reward: Reward::One, comment: None })?;
            return Ok(Flow::Continue);
        }
        let last = t.steps.iter().rev().find_map(|s| s.feedback.as_ref()).map(|f| f.text.lines().next().unwrap_or("").to_string());
        let summary = format!(
            "{} finished after {} step(s).{}",
            t.subtask_name,
            t.steps.len(),
            last.map(|l| format!(" Last result: {}", crate::reasoning::truncate_middle(&l, 300).0)).unwrap_or_default()
        );
        let (_, reply) = self.ask(UserRequest::Validation { episode: index, subtask_id: subtask_id.clone(), summary })?;
        let skip = reply == UserReply::Skip;
        let (reward, comment, flow) = match reply {
            UserReply::Validate { approved, comment } => (Reward::from_approved(approved), comment, Flow::Continue),
            UserReply::Answer(text) => (Reward::from_approved(is_yes(&text)), Some(text), Flow::Continue),
            UserReply::Skip => (Reward::Zero, Some("skipped by the user".into()), Flow::Continue),
            UserReply::Retry => (Reward::Zero, Some("retry requested".into()), Flow::Continue),
            UserReply::Abort(d) => (Reward::Zero, None, Flow::Abort(d)),
        };
        self.append(EventBody::EpisodeFinalized { episode: index, subtask_id: subtask_id.clone(), reward, comment })?;
        if skip && self.record().plan().is_some_and(|p| !p.is_resolved(&subtask_id)) {
            self.append(EventBody::UserSkip { subtask_id })?;
        }
        self.user.handled();
        Ok(flow)
    }

    fn episode_steps(&mut self, index: u64, subtask: &SubtaskSpec) -> Result<Flow, EngineError> {
        loop {
            let mut t = self.record().current_episode().cloned().expect("open episode");
            let (config, available, plan_text, ctx_text) = {
                let rec = self.record();
                let h = rec.header().expect("created");
                (h.episode_config.clone(), self.tools.available_for(t.episode_type.category), plan_summary(&rec), context_summary(rec.context()))
            };
            let env = StepEnv { subtask, available_tools: &available, plan_summary: &plan_text, context_summary: &ctx_text, config: &config };
            let selection = t.select_action(self.policy.as_mut(), &env)?;
            self.drain_exchanges()?;
            let step = t.steps.len();
            let selected = match selection {
                Err(abort) => {
                    self.append(EventBody::EpisodeAborted { episode: index, diagnostic: abort.diagnostic, rejections: abort.rejections })?;
                    return Ok(Flow::Continue);
                }
                Ok(s) => s,
            };
            self.append(EventBody::Action {
                episode: index,
                step,
                action: selected.action.clone(),
                rationale: selected.rationale.clone(),
                forced: selected.forced,
                rejections: selected.rejections.clone(),
            })?;
            let (source, raw) = match &selected.action {
                Action::Stop => return Ok(Flow::Continue),
                Action::GenerateText { text, context } => {
                    self.append(EventBody::AssistantMessage { episode: index, step, text: text.clone() })?;
                    let mut notes = Vec::new();
                    for (k, v) in context {
                        let res = match CtxValue::from_json(k, v) {
                            Ok(cv) => self.set_context(k, cv)?,
                            Err(e) => Err(e.to_string()),
                        };
                        match res {
                            Ok(()) => notes.push(format!("Recorded {k} = {v}.")),
                            Err(e) => notes.push(format!("Could not record {k}: {e}")),
                        }
                    }
                    let failed = notes.iter().any(|n| n.starts_with("Could not"));
                    let subject = ReflectionSubject {
                        kind: "text",
                        succeeded: !failed,
                        headline: "The text was added to the conversation.".into(),
                        body: notes.join("\n"),
                        error_line: notes.iter().find(|n| n.starts_with("Could not")).cloned(),
                    };
                    (FeedbackSource::SelfReflection, self.reflect(&subject)?)
                }
                Action::GenerateCode { code, dependencies } => {
                    let cell = CodeCell { cell_id: format!("e{index}s{step}"), source: code.clone(), declared_dependencies: dependencies.clone() };
                    (FeedbackSource::SelfReflection, self.run_code(index, step, &cell, config.feedback_max_chars)?)
                }
                Action::InvokeTool { tool, params } => (FeedbackSource::Tool, self.run_tool(index, step, &subtask.id, tool, params)?),
                Action::QueryUser { prompt, context_key } => {
                    let (seq, reply) = self.ask(UserRequest::Question { episode: index, step, subtask_id: subtask.id.clone(), prompt: prompt.clone() })?;
                    let text = match reply {
                        UserReply::Answer(t) => t,
                        UserReply::Validate { approved, comment } => comment.unwrap_or_else(|| if approved { "yes".into() } else { "no".into() }),
                        UserReply::Skip => "(the user declined to answer)".into(),
                        UserReply::Retry => "(the user asked to retry)".into(),
                        UserReply::Abort(d) => {
                            self.append(EventBody::EpisodeAborted { episode: index, diagnostic: d.clone(), rejections: Vec::new() })?;
                            self.user.handled();
                            return Ok(Flow::Abort(d));
                        }
                    };
                    self.append(EventBody::UserMessage { text: text.clone(), reply_to: Some(seq) })?;
                    if let Some(key) = context_key {
                        if let Ok(v) = CtxValue::parse_for(key, &text) {
                            self.set_context(key, v)?.ok();
                        }
                    }
                    self.user.handled();
                    (FeedbackSource::User, text)
                }
            };
            self.append(EventBody::Feedback { episode: index, step, source, raw })?;
        }
    }

    fn reflect(&mut self, subject: &ReflectionSubject) -> Result<String, EngineError> {
        let state = self.record().current_episode().expect("open").current_state().clone();
        let text = reflection_text(self.policy.as_mut(), &state, subject);
        self.drain_exchanges()?;
        Ok(text)
    }

    fn run_code(&mut self, index: u64, step: usize, cell: &CodeCell, max_chars: usize) -> Result<String, EngineError> {
        let workdir = self.session.workdir().to_path_buf();
        let before_files = self.record().files().clone();
        let result = self.executor.run(cell, &workdir);
        let hash = self.session.put_blob(&serde_json::to_vec(&result).expect("result serializes"))?;
        self.append(EventBody::ExecutionResultRef {
            episode: index,
            step,
            cell_id: cell.cell_id.clone(),
            status: result.status,
            hash,
            error_line: result.final_error_line(),
        })?;
        let changed = self.session.index_files()?;
        let dataset = self.record().context().text("dataset_path").map(str::to_string);
        for path in changed.iter().filter(|p| p.ends_with(".csv")) {
            let before_bytes = match before_files.get(path) {
                Some(e) => self.session.blobs().get_blob(&e.hash),
                None => dataset.as_ref().filter(|d| *d != path).and_then(|d| before_files.get(d)).and_then(|e| self.session.blobs().get_blob(&e.hash)),
            };
            let before_name = if before_files.contains_key(path) { path.clone() } else { dataset.clone().unwrap_or_default() };
            let (Some(b), Ok(after)) = (before_bytes, std::fs::read_to_string(workdir.join(path))) else {
                continue;
            };
            if let (Ok(bf), Ok(af)) = (Frame::parse(&String::from_utf8_lossy(&b)), Frame::parse(&after)) {
                let diff = compute_data_diff(&bf, &af);
                self.append(EventBody::DataDiff { episode: Some(index), before: before_name, after: path.clone(), diff })?;
            }
        }
        self.reflect(&result.reflection_subject(max_chars))
    }

    fn run_tool(&mut self, index: u64, step: usize, subtask_id: &str, tool: &str, params: &serde_json::Value) -> Result<String, EngineError> {
        let workdir = self.session.workdir().to_path_buf();
        let (ctx, recipe, seed) = {
            let rec = self.record();
            (rec.context().clone(), rec.recipe().to_vec(), rec.header().expect("created").seed)
        };
        let outcome = self.tools.invoke(tool, params, &ToolContext { workdir: &workdir, seed, project: &ctx, recipe: &recipe });
        let hash = self.session.put_blob(&serde_json::to_vec(&outcome.report).expect("report serializes"))?;
        self.append(EventBody::ToolReportRef {
            episode: index,
            step,
            tool: tool.into(),
            status: outcome.report.status,
            hash,
            artifacts: outcome.report.artifacts.clone(),
        })?;
        self.session.index_files()?;
        let effects = outcome.effects;
        let old_dataset = ctx.text("dataset_path").map(str::to_string);
        for (k, v) in &effects.context_updates {
            self.set_context(k, v.clone())?.ok();
        }
        let dataset = effects.derived_dataset.clone().or(old_dataset.clone()).unwrap_or_default();
        for step in &effects.transforms {
            self.append(EventBody::Transform { dataset: dataset.clone(), step: step.clone() })?;
        }
        for finding in &effects.findings {
            self.append(EventBody::Finding { episode: Some(index), subtask_id: subtask_id.into(), finding: finding.clone() })?;
        }
        if let Some(m) = &effects.model {
            if let Ok(bytes) = std::fs::read(workdir.join(&m.path)) {
                let hash = self.session.put_blob(&bytes)?;
                self.append(EventBody::ModelFit(ModelFit {
                    episode: Some(index),
                    path: m.path.clone(),
                    hash,
                    problem_type: m.problem_type.clone(),
                    family: m.family.clone(),
                    metric: m.metric.clone(),
                    cv_score: m.cv_score,
                    cv_fold_scores: m.cv_fold_scores.clone(),
                }))?;
            }
        }
        if let (Some(before), Some(after)) = (old_dataset, effects.derived_dataset.as_ref()) {
            if let (Ok(b), Ok(a)) = (Frame::read(&workdir.join(&before)), Frame::read(&workdir.join(after))) {
                self.append(EventBody::DataDiff { episode: Some(index), before, after: after.clone(), diff: compute_data_diff(&b, &a) })?;
            }
        }
        Ok(outcome.report.feedback_text())
    }
}
