use std::sync::Arc;
use std::time::Duration;

use climb_core::harness::dataset;
use climb_core::harness::persona::default_persona;
use climb_core::harness::scripts::climb_script;
use climb_core::llm::ActionPolicy;
use climb_core::session::api::{router, AppState, PolicyFactory};
use climb_core::session::store::sha256_hex;
use climb_core::session::{SessionEvent, SessionStore};
use futures_util::StreamExt;
use serde_json::{json, Value};

struct Server {
    base: String,
    _dir: tempfile::TempDir,
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let store = SessionStore::new(dir.path()).unwrap();
    let factory: PolicyFactory = Arc::new(|_| Ok(Box::new(climb_script()) as Box<dyn ActionPolicy>));
    let app = router(AppState::new(store, factory));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server { base: format!("http://{addr}"), _dir: dir }
}

async fn create(client: &reqwest::Client, base: &str) -> String {
    let data = dataset::generate(11);
    let form = reqwest::multipart::Form::new()
        .part("dataset", reqwest::multipart::Part::bytes(data.train_csv.into_bytes()).file_name("cohort.csv"))
        .text("seed", "11")
        .text("problem_statement", "Predict y.");
    let resp = client.post(format!("{base}/sessions")).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), 201);
    let body: Value = resp.json().await.unwrap();
    body["session_id"].as_str().unwrap().to_string()
}

async fn get_json(client: &reqwest::Client, url: &str) -> (u16, Value) {
    let resp = client.get(url).send().await.unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().await.unwrap_or(Value::Null))
}

/// Waits until the engine is blocked on a request or the session closed.
async fn settle(client: &reqwest::Client, base: &str, id: &str) -> Value {
    for _ in 0..2000 {
        let (_, plan) = get_json(client, &format!("{base}/sessions/{id}/plan")).await;
        if !plan["pending"].is_null() || plan["status"] != "active" {
            return plan;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("session never settled");
}

/// Plays the default persona over HTTP until the session closes.
async fn drive(client: &reqwest::Client, base: &str, id: &str) -> usize {
    let persona = default_persona();
    let mut answered = 0;
    loop {
        let plan = settle(client, base, id).await;
        if plan["status"] != "active" {
            return answered;
        }
        let request = &plan["pending"]["request"];
        let resp = match request["request"].as_str().unwrap() {
            "validation" => {
                let subtask = request["subtask_id"].as_str().unwrap();
                if answered == 0 {
                    let wrong = client.post(format!("{base}/sessions/{id}/validate")).json(&json!({"subtask_id": "not_this_one", "reward": 1})).send().await.unwrap();
                    assert_eq!(wrong.status(), 409);
                }
                client.post(format!("{base}/sessions/{id}/validate")).json(&json!({"subtask_id": subtask, "reward": 1})).send().await.unwrap()
            }
            "context" => {
                let key = request["key"].as_str().unwrap();
                let text = persona.context.get(key).cloned().unwrap();
                client.post(format!("{base}/sessions/{id}/message")).json(&json!({ "text": text })).send().await.unwrap()
            }
            _ => {
                let prompt = request["prompt"].as_str().unwrap();
                let text = persona.answer_for(prompt).unwrap();
                client.post(format!("{base}/sessions/{id}/message")).json(&json!({ "text": text })).send().await.unwrap()
            }
        };
        assert_eq!(resp.status(), 200, "{:?}", resp.text().await);
        answered += 1;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn session_runs_to_completion_over_http() {
    let server = start().await;
    let base = &server.base;
    let client = reqwest::Client::new();
    let id = create(&client, base).await;

    let ws_url = format!("{}/sessions/{id}/stream?since=0", base.replace("http://", "ws://"));
    let (mut ws, _) = tokio_tungstenite::connect_async(ws_url).await.unwrap();
    let collector = tokio::spawn(async move {
        let mut seen: Vec<SessionEvent> = Vec::new();
        while let Some(Ok(msg)) = ws.next().await {
            if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
                seen.push(serde_json::from_str(&t).unwrap());
            }
        }
        seen
    });

    let answered = drive(&client, base, &id).await;
    assert!(answered > 25);

    let (status, events) = get_json(&client, &format!("{base}/sessions/{id}/events")).await;
    assert_eq!(status, 200);
    let events: Vec<SessionEvent> = serde_json::from_value(events).unwrap();
    assert_eq!(events.last().unwrap().body.kind(), "session_closed");
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
    }

    let streamed = tokio::time::timeout(Duration::from_secs(10), collector).await.unwrap().unwrap();
    assert_eq!(streamed, events, "stream delivers every event once, in order");

    let (_, tail) = get_json(&client, &format!("{base}/sessions/{id}/events?since={}", events.len() - 3)).await;
    assert_eq!(tail.as_array().unwrap().len(), 3);

    let (_, files) = get_json(&client, &format!("{base}/sessions/{id}/files")).await;
    let report_hash = files["final_report.md"]["hash"].as_str().unwrap().to_string();
    let bytes = client.get(format!("{base}/sessions/{id}/files/{report_hash}")).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(sha256_hex(&bytes), report_hash);
    assert!(String::from_utf8_lossy(&bytes).contains("## Models"));

    let diff_seq = events.iter().find(|e| e.body.kind() == "data_diff").unwrap().seq;
    let (status, diff) = get_json(&client, &format!("{base}/sessions/{id}/diff/{diff_seq}")).await;
    assert_eq!(status, 200);
    assert!(diff["diff"]["rows_before"].is_number());
    let (status, _) = get_json(&client, &format!("{base}/sessions/{id}/diff/1")).await;
    assert_eq!(status, 404);

    let late = client.post(format!("{base}/sessions/{id}/message")).json(&json!({"text": "hello"})).send().await.unwrap();
    assert_eq!(late.status(), 409);

    let (_, list) = get_json(&client, &format!("{base}/sessions")).await;
    assert_eq!(list[0]["session_id"], id.as_str());
    assert_eq!(list[0]["status"], "completed");

    let (status, _) = get_json(&client, &format!("{base}/sessions/nope/plan")).await;
    assert_eq!(status, 404);
    let (status, _) = get_json(&client, &format!("{base}/sessions/{id}/files/{}", "0".repeat(64))).await;
    assert_eq!(status, 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn upload_without_dataset_is_rejected() {
    let server = start().await;
    let client = reqwest::Client::new();
    let form = reqwest::multipart::Form::new().text("seed", "1");
    let resp = client.post(format!("{}/sessions", server.base)).multipart(form).send().await.unwrap();
    assert_eq!(resp.status(), 400);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn validation_reward_must_be_binary() {
    let server = start().await;
    let client = reqwest::Client::new();
    let id = create(&client, &server.base).await;
    settle(&client, &server.base, &id).await;
    let resp = client.post(format!("{}/sessions/{id}/validate", server.base)).json(&json!({"subtask_id": "upload_data_file", "reward": 2})).send().await.unwrap();
    assert_eq!(resp.status(), 400);
}
