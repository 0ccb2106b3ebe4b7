use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use climb_core::llm::endpoint::{EndpointConfig, EndpointPolicy};
use climb_core::llm::{ActionPolicy, PolicyError};
use climb_core::plan::SubtaskSpec;
use climb_core::reasoning::{begin_episode, Action, EpisodeCategory, EpisodeConfig, Prior, StateText, StepEnv};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Mock {
    replies: Arc<Mutex<VecDeque<(u16, String)>>>,
    seen: Arc<Mutex<Vec<(Option<String>, Value)>>>,
}

async fn chat(State(m): State<Mock>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let auth = headers.get("authorization").and_then(|v| v.to_str().ok()).map(str::to_string);
    m.seen.lock().unwrap().push((auth, body));
    let (status, content) = m.replies.lock().unwrap().pop_front().unwrap_or((500, String::new()));
    (StatusCode::from_u16(status).unwrap(), Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})))
}

/// Serves canned completions on a background runtime and returns the base URL.
fn serve(replies: Vec<(u16, &str)>) -> (String, Mock) {
    let mock = Mock::default();
    mock.replies.lock().unwrap().extend(replies.into_iter().map(|(s, c)| (s, c.to_string())));
    let app = Router::new().route("/v1/chat/completions", post(chat)).with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (format!("http://{}/v1", rx.recv().unwrap()), mock)
}

fn policy(base_url: String, key_env: &str) -> EndpointPolicy {
    std::env::set_var(key_env, "sk-test-secret");
    EndpointPolicy::new(EndpointConfig { base_url, api_key_env: key_env.into(), timeout_seconds: 10, ..EndpointConfig::default() }).unwrap()
}

fn propose(policy: &mut EndpointPolicy) -> Result<Action, PolicyError> {
    let sub = SubtaskSpec::new_mandatory("explore", "Explore the data", "Look at the columns.");
    let ep = begin_episode(0, Prior::Initial(StateText::initial("Predict y.", "200 rows", 24_000)), &sub, EpisodeCategory::DataExploration).unwrap();
    let config = EpisodeConfig::default();
    let env = StepEnv { subtask: &sub, available_tools: &[], plan_summary: "", context_summary: "", config: &config };
    policy.propose(&climb_core::llm::PolicyInput { episode: &ep, env: &env, notices: &[] }).map(|p| p.action)
}

const STOP: &str = "Nothing more to do here.\n```action\n{\"kind\": \"stop\"}\n```";

#[test]
fn a_well_formed_reply_becomes_an_action() {
    let (url, mock) = serve(vec![(200, STOP)]);
    let mut p = policy(url, "CLIMB_TEST_KEY_A");
    assert_eq!(propose(&mut p).unwrap(), Action::Stop);
    let seen = mock.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].0.as_deref(), Some("Bearer sk-test-secret"));
    assert!(seen[0].1["messages"].as_array().unwrap().len() >= 2);
    let exchanges = p.drain_exchanges();
    assert_eq!(exchanges.len(), 1);
    assert!(!exchanges[0].to_string().contains("sk-test-secret"));
    assert!(p.drain_exchanges().is_empty());
}

#[test]
fn an_unparseable_reply_is_repaired_once() {
    let (url, mock) = serve(vec![(200, "I would look at the data."), (200, STOP)]);
    let mut p = policy(url, "CLIMB_TEST_KEY_B");
    assert_eq!(propose(&mut p).unwrap(), Action::Stop);
    let seen = mock.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let last = seen[1].1["messages"].as_array().unwrap().last().unwrap()["content"].as_str().unwrap().to_string();
    assert!(last.contains("Parse error"), "{last}");

    let (url, _) = serve(vec![(200, "still prose"), (200, "more prose")]);
    let mut p = policy(url, "CLIMB_TEST_KEY_C");
    assert!(matches!(propose(&mut p), Err(PolicyError::Parse { .. })));
}

#[test]
fn server_errors_surface_as_transport_failures() {
    let (url, _) = serve(vec![(500, "")]);
    let mut p = policy(url, "CLIMB_TEST_KEY_D");
    assert!(matches!(propose(&mut p), Err(PolicyError::Transport(_))));
}

#[test]
fn a_missing_key_fails_before_any_request() {
    let (url, mock) = serve(vec![]);
    let config = EndpointConfig { base_url: url, api_key_env: "CLIMB_TEST_KEY_UNSET".into(), ..EndpointConfig::default() };
    assert!(matches!(EndpointPolicy::new(config), Err(PolicyError::Config(_))));
    assert!(mock.seen.lock().unwrap().is_empty());

    std::env::set_var("CLIMB_TEST_KEY_E", "k");
    let bad = EndpointConfig { base_url: "ftp://x".into(), api_key_env: "CLIMB_TEST_KEY_E".into(), ..EndpointConfig::default() };
    assert!(matches!(EndpointPolicy::new(bad), Err(PolicyError::Config(_))));
}
