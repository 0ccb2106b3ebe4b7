use climb_core::llm::ScriptedPolicy;
use climb_core::plan::{Reward, SubtaskSpec};
use climb_core::reasoning::{
    begin_episode, Action, EpisodeCategory, EpisodeConfig, EpisodeTranscript, Prior, ReasoningError, StateText, StepEnv,
    VETO_NOTICE,
};
use climb_core::tools::{ToolDescriptor, ToolRegistry};
use serde_json::json;

fn subtask() -> SubtaskSpec {
    SubtaskSpec::new_mandatory("explore", "Explore the data", "Look at the columns.")
}

fn first(sub: &SubtaskSpec) -> EpisodeTranscript {
    let initial = StateText::initial("Predict y.", "200 rows, 5 columns", 24_000);
    begin_episode(0, Prior::Initial(initial), sub, EpisodeCategory::DataExploration).unwrap()
}

fn env<'a>(sub: &'a SubtaskSpec, tools: &'a [ToolDescriptor], config: &'a EpisodeConfig) -> StepEnv<'a> {
    StepEnv { subtask: sub, available_tools: tools, plan_summary: "", context_summary: "", config }
}

fn exploration_tools() -> Vec<ToolDescriptor> {
    ToolRegistry::with_native_tools().available_for(EpisodeCategory::DataExploration)
}

#[test]
fn later_episodes_need_the_previous_reward() {
    let sub = subtask();
    let initial = StateText::initial("p", "d", 24_000);
    assert_eq!(begin_episode(1, Prior::Initial(initial), &sub, EpisodeCategory::DataExploration).unwrap_err(), ReasoningError::MissingPrior(1));

    let mut ep = first(&sub);
    let unrewarded = ep.as_prior();
    assert_eq!(begin_episode(1, unrewarded, &sub, EpisodeCategory::DataExploration).unwrap_err(), ReasoningError::MissingPrior(1));
    assert_eq!(begin_episode(0, ep.as_prior(), &sub, EpisodeCategory::DataExploration).unwrap_err(), ReasoningError::UnexpectedPrior);

    let config = EpisodeConfig::default();
    let mut policy = ScriptedPolicy::from_actions(vec![Action::Stop]);
    let sel = ep.select_action(&mut policy, &env(&sub, &[], &config)).unwrap().unwrap();
    assert_eq!(ep.apply_action(&sel).unwrap(), None);
    ep.finalize(Reward::One).unwrap();
    let next = begin_episode(1, ep.as_prior(), &sub, EpisodeCategory::DataExploration).unwrap();
    assert_eq!(next.initial_state.last_block(), Some(StateText::reward_block(0, "Explore the data", Reward::One).as_str()));
}

#[test]
fn stopping_at_the_first_step_costs_nothing() {
    let sub = subtask();
    let mut ep = first(&sub);
    let config = EpisodeConfig::default();
    let mut policy = ScriptedPolicy::from_actions(vec![Action::Stop]);
    let sel = ep.select_action(&mut policy, &env(&sub, &[], &config)).unwrap().unwrap();
    assert!(!sel.forced);
    ep.apply_action(&sel).unwrap();
    ep.finalize(Reward::Zero).unwrap();
    assert_eq!((ep.continuation_count(), ep.total_cost), (0, 0));
    assert_eq!(ep.final_state, ep.initial_state);
    assert!(ep.is_closed());
}

#[test]
fn the_step_limit_forces_a_stop() {
    let sub = subtask();
    let mut ep = first(&sub);
    let config = EpisodeConfig { l_max: 2, ..EpisodeConfig::default() };
    let mut policy = ScriptedPolicy::from_actions(vec![Action::text("a"), Action::text("b"), Action::text("c")]);
    let tools = exploration_tools();
    let e = env(&sub, &tools, &config);
    for _ in 0..2 {
        let sel = ep.select_action(&mut policy, &e).unwrap().unwrap();
        let req = ep.apply_action(&sel).unwrap().unwrap();
        ep.collect_feedback(&req, req.source, "noted", &config).unwrap();
    }
    let sel = ep.select_action(&mut policy, &e).unwrap().unwrap();
    assert!(sel.forced && sel.action.is_stop());
    assert_eq!(policy.remaining(), 1);
}

#[test]
fn user_queries_cost_one_and_other_sources_cost_nothing() {
    let mut sub = subtask();
    sub.requires_user = true;
    let mut ep = first(&sub);
    let config = EpisodeConfig::default();
    let actions = vec![
        Action::query("Which column is the target?"),
        Action::text("thinking"),
        Action::query("Any columns to drop?"),
        Action::code("print(1)"),
        Action::Stop,
    ];
    let mut policy = ScriptedPolicy::from_actions(actions);
    let tools = exploration_tools();
    let e = env(&sub, &tools, &config);
    while let Some(req) = {
        let sel = ep.select_action(&mut policy, &e).unwrap().unwrap();
        ep.apply_action(&sel).unwrap()
    } {
        ep.collect_feedback(&req, req.source, "reply", &config).unwrap();
    }
    ep.finalize(Reward::One).unwrap();
    assert_eq!(ep.total_cost, 2);
    assert_eq!(ep.user_query_count(), 2);
    assert_eq!(ep.steps.len(), 5);
}

#[test]
fn a_premature_query_is_vetoed_once() {
    let sub = subtask();
    let mut ep = first(&sub);
    let config = EpisodeConfig::default();
    let mut policy = ScriptedPolicy::from_actions(vec![Action::query("What now?"), Action::query("Still, what now?")]);
    let sel = ep.select_action(&mut policy, &env(&sub, &[], &config)).unwrap().unwrap();
    assert_eq!(sel.rejections.len(), 1);
    assert_eq!(sel.rejections[0].notice, VETO_NOTICE);
    assert!(matches!(sel.action, Action::QueryUser { .. }));

    let mut unguarded = first(&sub);
    let mut policy = ScriptedPolicy::from_actions(vec![Action::query("What now?")]);
    let sel = unguarded.select_action(&mut policy, &env(&sub, &[], &EpisodeConfig::unguarded())).unwrap().unwrap();
    assert!(sel.rejections.is_empty());
}

#[test]
fn an_unavailable_tool_gets_one_more_chance() {
    let sub = subtask();
    let config = EpisodeConfig::default();
    let tools = exploration_tools();
    let e = env(&sub, &tools, &config);

    let mut ep = first(&sub);
    let mut policy = ScriptedPolicy::from_actions(vec![Action::tool("automl", json!({})), Action::tool("descriptive_statistics", json!({}))]);
    let sel = ep.select_action(&mut policy, &e).unwrap().unwrap();
    assert_eq!(sel.rejections.len(), 1);
    assert!(sel.rejections[0].notice.contains("descriptive_statistics"), "{}", sel.rejections[0].notice);

    let mut ep = first(&sub);
    let mut policy = ScriptedPolicy::from_actions(vec![Action::tool("automl", json!({})), Action::tool("automl", json!({}))]);
    let abort = ep.select_action(&mut policy, &e).unwrap().unwrap_err();
    assert_eq!(abort.rejections.len(), 2);
    ep.abort(&abort.diagnostic, &config);
    ep.finalize(Reward::One).unwrap();
    assert_eq!(ep.reward, Some(Reward::Zero));
    assert!(ep.final_state.last_block().unwrap().contains("stop (aborted)"));
}

#[test]
fn operations_out_of_order_are_rejected() {
    let sub = subtask();
    let config = EpisodeConfig::default();
    let mut ep = first(&sub);
    assert!(matches!(ep.finalize(Reward::One), Err(ReasoningError::NotStopped(_))));

    let mut policy = ScriptedPolicy::from_actions(vec![Action::text("a"), Action::Stop]);
    let sel = ep.select_action(&mut policy, &env(&sub, &[], &config)).unwrap().unwrap();
    let req = ep.apply_action(&sel).unwrap().unwrap();
    assert!(matches!(ep.select_action(&mut policy, &env(&sub, &[], &config)), Err(ReasoningError::NotOpen(_))));
    ep.collect_feedback(&req, req.source, "ok", &config).unwrap();
    assert_eq!(ep.collect_feedback(&req, req.source, "again", &config).unwrap_err(), ReasoningError::NoPendingFeedback(0));
}

#[test]
fn long_feedback_is_truncated_to_the_budget() {
    let sub = subtask();
    let config = EpisodeConfig { feedback_max_chars: 100, ..EpisodeConfig::default() };
    let mut ep = first(&sub);
    let mut policy = ScriptedPolicy::from_actions(vec![Action::code("print('x' * 10000)")]);
    let sel = ep.select_action(&mut policy, &env(&sub, &[], &config)).unwrap().unwrap();
    let req = ep.apply_action(&sel).unwrap().unwrap();
    let fb = ep.collect_feedback(&req, req.source, &"x".repeat(10_000), &config).unwrap();
    assert!(fb.text.chars().count() <= 200, "{}", fb.text.len());
}
