//! Randomized sessions and the invariants every session must satisfy.
#![allow(dead_code)]

use std::path::Path;

use climb_core::codeexec::{CodeCell, ExecStatus, ExecutionResult};
use climb_core::engine::{CellExecutor, Engine, UserChannel, UserReply};
use climb_core::harness::dataset;
use climb_core::harness::persona::default_persona;
use climb_core::llm::{ScriptEntry, ScriptedPolicy};
use climb_core::plan::{Reward, SkipReason};
use climb_core::reasoning::{Action, EpisodeConfig, FeedbackSource, StateText};
use climb_core::session::store::{Clock, NewSession};
use climb_core::session::{EventBody, SessionRecord, SessionStatus, SessionStore, UserRequest};
use climb_core::tools::ToolRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Answers code cells with a random outcome instead of running them.
pub struct StubExecutor(pub ChaCha8Rng);

impl CellExecutor for StubExecutor {
    fn run(&mut self, cell: &CodeCell, _workdir: &Path) -> ExecutionResult {
        let status = match self.0.random_range(0..10) {
            0..=5 => ExecStatus::Success,
            6..=8 => ExecStatus::Failure,
            _ => ExecStatus::Timeout,
        };
        let failed = status != ExecStatus::Success;
        ExecutionResult {
            cell_id: cell.cell_id.clone(),
            status,
            stdout: if failed { String::new() } else { format!("ran {} bytes\n", cell.source.len()) },
            stderr: String::new(),
            exception_text: failed.then(|| "Traceback (most recent call last):\nValueError: stub failure".to_string()),
            exit_code: Some(if failed { 1 } else { 0 }),
            files_created: Vec::new(),
            files_modified: Vec::new(),
            files_deleted: Vec::new(),
            rejected_paths: Vec::new(),
            duration: 0.0,
        }
    }
}

/// A user who approves most of the time and otherwise rejects, skips,
/// retries or (rarely) walks away.
pub struct RandomUser(pub ChaCha8Rng);

impl UserChannel for RandomUser {
    fn reply(&mut self, request: &UserRequest, _record: &SessionRecord) -> UserReply {
        let rng = &mut self.0;
        if rng.random_bool(0.002) {
            return UserReply::Abort("the user left".into());
        }
        match request {
            UserRequest::Validation { .. } => match rng.random_range(0..100) {
                0..=69 => UserReply::Validate { approved: true, comment: None },
                70..=84 => UserReply::Validate { approved: false, comment: Some("not yet".into()) },
                85..=92 => UserReply::Skip,
                _ => UserReply::Retry,
            },
            UserRequest::Question { .. } => UserReply::Answer(["yes", "no", "y", "site", "regression", "I am not sure."][rng.random_range(0..6)].into()),
            UserRequest::Context { key, .. } => {
                if rng.random_bool(0.05) {
                    return UserReply::Skip;
                }
                let answer = match key.as_str() {
                    "problem_type" => ["regression", "regression", "classification", "survival"][rng.random_range(0..4)].to_string(),
                    "has_time_event_columns" => "no".into(),
                    "n_rows" => "200".into(),
                    "missing_fraction" => "0.1".into(),
                    other => default_persona().context.get(other).cloned().unwrap_or_else(|| "y".into()),
                };
                UserReply::Answer(answer)
            }
            UserRequest::AttemptsExhausted { .. } => UserReply::Answer(if rng.random_bool(0.8) { "skip" } else { "retry" }.into()),
        }
    }
}

const CHEAP_TOOLS: [&str; 6] = ["check_data_file", "descriptive_statistics", "missingness_profile", "identifier_screen", "leakage_screen", "no_such_tool"];

fn random_action(rng: &mut ChaCha8Rng) -> Vec<ScriptEntry> {
    let a = match rng.random_range(0..10) {
        0..=1 => Action::text(format!("Working on it ({}).", rng.random::<u16>())),
        2..=3 => Action::code(format!("x = {}\nprint(x)\n", rng.random::<u16>())),
        4..=6 => Action::tool(CHEAP_TOOLS[rng.random_range(0..CHEAP_TOOLS.len())], json!({})),
        7..=8 => Action::query("Is this what you expected?"),
        _ => {
            // Unparseable output, then the repair.
            return vec![ScriptEntry::Raw { text: "I think we should {".into() }, ScriptEntry::action(Action::text("Repaired."))];
        }
    };
    let mut out = vec![ScriptEntry::action(a.clone())];
    if matches!(a, Action::GenerateCode { .. }) && rng.random_bool(0.3) {
        out.push(ScriptEntry::Reflection { text: "The cell did what was intended.".into() });
    }
    out
}

/// A script of `episodes` runs of random continuation actions, most of
/// them ended by stop. Runs longer than `l_max` exercise the forced stop.
pub fn random_script(rng: &mut ChaCha8Rng, episodes: usize, l_max: usize) -> ScriptedPolicy {
    let mut entries = Vec::new();
    for _ in 0..episodes {
        let k = rng.random_range(0..=l_max + 2);
        for _ in 0..k {
            entries.extend(random_action(rng));
        }
        if rng.random_bool(0.9) {
            entries.push(ScriptEntry::action(Action::Stop));
        }
    }
    ScriptedPolicy::new(entries)
}

pub struct RandomSession {
    pub record: SessionRecord,
    pub config: EpisodeConfig,
    pub status: SessionStatus,
}

pub fn random_session(store: &SessionStore, seed: u64) -> RandomSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l_max = rng.random_range(1..=6);
    let config = EpisodeConfig { l_max, veto_user_queries: rng.random_bool(0.8), ..EpisodeConfig::default() };
    let data = dataset::generate(seed % 7);
    let mut spec = NewSession::new("cohort.csv", data.train_csv.into_bytes());
    spec.session_id = Some(format!("prop-{seed}"));
    spec.seed = seed;
    spec.durable = false;
    spec.clock = Clock::Logical;
    spec.episode_config = config.clone();
    spec.max_attempts = rng.random_range(1..=3);
    spec.problem_statement = "Predict y.".into();
    let episodes = rng.random_range(5..80);
    let policy = random_script(&mut rng, episodes, l_max);
    let session = store.create(spec).expect("create session");
    let mut engine = Engine::new(session, Box::new(policy), Box::new(RandomUser(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))))
        .with_executor(Box::new(StubExecutor(ChaCha8Rng::seed_from_u64(seed.rotate_left(17)))));
    let status = engine.run().expect("engine run");
    let record = engine.session().record().clone();
    RandomSession { record, config, status }
}

/// Every invariant violation in a finished session, as text.
pub fn violations(record: &SessionRecord, config: &EpisodeConfig) -> Vec<String> {
    let mut v = Vec::new();
    let header = record.header().expect("header");
    let registry = ToolRegistry::with_native_tools();
    let episodes = record.episodes();

    // Step bound.
    for e in episodes {
        let l_max = config.l_max_for(e.episode_type.category);
        if e.continuation_count() > l_max {
            v.push(format!("episode {} has {} continuation actions > l_max {l_max}", e.episode_index, e.continuation_count()));
        }
        if let Some(s) = e.steps.get(l_max) {
            if !s.action.is_stop() {
                v.push(format!("episode {}: action {} after l_max is not stop", e.episode_index, l_max + 1));
            }
        }
        if e.is_closed() && !e.steps.last().is_some_and(|s| s.action.is_stop()) {
            v.push(format!("closed episode {} does not end with stop", e.episode_index));
        }
    }

    // Cost ledger.
    let user_feedback = record.feedback_entries().filter(|f| f.source == FeedbackSource::User).count();
    let user_events = record.events().iter().filter(|e| matches!(e.body, EventBody::Feedback { source: FeedbackSource::User, .. })).count();
    let per_episode: usize = episodes.iter().map(|e| e.user_query_count()).sum();
    let ledger = record.ledger().total as usize;
    if ledger != user_feedback || ledger != user_events || ledger != per_episode {
        v.push(format!("ledger {ledger} vs user feedback {user_feedback} / events {user_events} / episodes {per_episode}"));
    }
    for e in episodes {
        let stop_cost: u32 = e.steps.iter().filter(|s| s.action.is_stop()).filter_map(|s| s.feedback.as_ref()).map(|f| f.cost).sum();
        if e.total_cost as usize != e.user_query_count() || stop_cost != 0 {
            v.push(format!("episode {} cost {} for {} user queries", e.episode_index, e.total_cost, e.user_query_count()));
        }
    }

    // Feedback concatenation: replaying the transition reproduces the
    // final state, and each new state holds its feedback verbatim.
    for e in episodes {
        let mut state = e.initial_state.clone();
        for s in &e.steps {
            let Some(fb) = &s.feedback else { continue };
            let line = if s.action.is_stop() { "stop (aborted)".to_string() } else { s.action.summary_line() };
            state = state.transition(s.t, &line, fb);
            if !state.serialized().contains(&fb.text) || !state.last_block().is_some_and(|b| b.ends_with(&fb.text)) {
                v.push(format!("episode {} step {}: feedback missing from the new state", e.episode_index, s.t));
            }
        }
        if state != e.final_state {
            v.push(format!("episode {}: final state is not the fold of its steps", e.episode_index));
        }
    }

    // Episode chaining.
    for (i, e) in episodes.iter().enumerate() {
        if e.episode_index != i as u64 {
            v.push(format!("episode at position {i} has index {}", e.episode_index));
        }
        let expected = if i == 0 {
            StateText::initial(&header.problem_statement, &header.dataset_profile, header.episode_config.window_chars)
        } else {
            let p = &episodes[i - 1];
            match p.reward {
                Some(r) => p.final_state.with_block(StateText::reward_block(p.episode_index, &p.subtask_name, r)),
                None => {
                    v.push(format!("episode {} started before episode {} had a reward", i, i - 1));
                    continue;
                }
            }
        };
        if e.initial_state != expected {
            v.push(format!("episode {i}: initial state is not the previous final state plus its reward"));
        }
    }

    // Action legality.
    for ev in record.events() {
        if let EventBody::Action { episode, action: Action::InvokeTool { tool, .. }, .. } = &ev.body {
            let Some(e) = episodes.get(*episode as usize) else {
                v.push(format!("action for unknown episode {episode}"));
                continue;
            };
            if !registry.available_for(e.episode_type.category).iter().any(|d| &d.name == tool) {
                v.push(format!("episode {episode} ({}) invoked unavailable tool {tool}", e.episode_type.category));
            }
        }
    }

    // Completion soundness.
    let plan = record.plan().expect("plan");
    let spec = plan.spec().clone();
    let resolved = spec.subtasks().all(|s| plan.is_resolved(&s.id));
    if plan.is_complete() != resolved {
        v.push("is_complete disagrees with every subtask being completed or skipped".into());
    }
    if record.status() == SessionStatus::Completed && !plan.is_complete() {
        v.push("session completed with unresolved subtasks".into());
    }
    for s in spec.subtasks() {
        if plan.is_completed(&s.id) && plan.is_skipped(&s.id) {
            v.push(format!("{} is both completed and skipped", s.id));
        }
        if s.is_mandatory() {
            match plan.skipped().get(&s.id) {
                Some(SkipReason::UserRequested) if !record.user_skips().contains(&s.id) => {
                    v.push(format!("mandatory {} skipped without a user skip event", s.id))
                }
                Some(SkipReason::ConditionFalse) => v.push(format!("mandatory {} skipped by a condition", s.id)),
                _ => {}
            }
        }
        if let Some(rho) = plan.record(&s.id).and_then(|r| r.completed_at_episode) {
            let ok = episodes.get(rho as usize).is_some_and(|e| e.episode_type.subtask_id == s.id && e.reward == Some(Reward::One));
            if !ok {
                v.push(format!("{} completed at episode {rho} without a reward-1 episode", s.id));
            }
        }
    }
    v
}
