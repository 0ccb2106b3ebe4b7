//! HTTP and WebSocket interface. Each running session has its engine on a
//! dedicated thread; handlers read the shared record and talk to the engine
//! only through the pending user request.

use std::collections::HashMap;
use std::sync::mpsc as std_mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use super::store::{Blobs, Clock, NewSession, StoreError};
use super::{EventBody, LiveSession, SessionEvent, SessionHeader, SessionMode, SessionRecord, SessionStatus, SessionStore, UserRequest};
use crate::engine::{CellExecutor, Engine, UserChannel, UserReply};
use crate::llm::ActionPolicy;

/// Builds the policy for a session, new or resumed.
pub type PolicyFactory = Arc<dyn Fn(&SessionHeader) -> Result<Box<dyn ActionPolicy>, String> + Send + Sync>;
pub type ExecutorFactory = Arc<dyn Fn() -> Box<dyn CellExecutor> + Send + Sync>;

/// How long a reply waits for the engine to record it.
pub const ACK_TIMEOUT: Duration = Duration::from_secs(30);

struct Inbound {
    pending_seq: u64,
    reply: UserReply,
    ack: oneshot::Sender<Result<(), String>>,
}

/// The engine side of the API: blocks until a reply for the current
/// request arrives.
struct ChannelUser {
    inbox: std_mpsc::Receiver<Inbound>,
    ack: Option<oneshot::Sender<Result<(), String>>>,
}

impl ChannelUser {
    fn settle(&mut self) {
        if let Some(a) = self.ack.take() {
            let _ = a.send(Ok(()));
        }
    }
}

impl UserChannel for ChannelUser {
    fn reply(&mut self, _request: &UserRequest, record: &SessionRecord) -> UserReply {
        self.settle();
        let Some(&(seq, _)) = record.pending() else {
            return UserReply::Abort("no pending request".into());
        };
        loop {
            let Ok(msg) = self.inbox.recv() else {
                return UserReply::Abort("the user channel was closed".into());
            };
            if msg.pending_seq != seq {
                let _ = msg.ack.send(Err(format!("request {} is no longer pending (now {seq})", msg.pending_seq)));
                continue;
            }
            self.ack = Some(msg.ack);
            return msg.reply;
        }
    }

    fn handled(&mut self) {
        self.settle();
    }
}

impl Drop for ChannelUser {
    fn drop(&mut self) {
        self.settle();
    }
}

struct Running {
    shared: Arc<RwLock<SessionRecord>>,
    inbox: std_mpsc::Sender<Inbound>,
    events: broadcast::Sender<SessionEvent>,
}

#[derive(Clone)]
pub struct AppState {
    store: SessionStore,
    policy: PolicyFactory,
    executor: Option<ExecutorFactory>,
    running: Arc<Mutex<HashMap<String, Arc<Running>>>>,
}

impl AppState {
    pub fn new(store: SessionStore, policy: PolicyFactory) -> Self {
        AppState { store, policy, executor: None, running: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn with_executor(mut self, executor: ExecutorFactory) -> Self {
        self.executor = Some(executor);
        self
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    /// Starts the engine for a session on its own thread. The caller
    /// registers the result.
    fn launch(&self, mut session: LiveSession) -> Result<Arc<Running>, ApiError> {
        let header = session.record().header().cloned().ok_or_else(|| ApiError::internal("session has no header"))?;
        let policy = (self.policy)(&header).map_err(ApiError::BadRequest)?;
        let (events, _) = broadcast::channel(1024);
        let tx = events.clone();
        session.observe(move |e| {
            let _ = tx.send(e.clone());
        });
        let (inbox_tx, inbox_rx) = std_mpsc::channel();
        let running = Arc::new(Running { shared: session.shared(), inbox: inbox_tx, events });
        let user = ChannelUser { inbox: inbox_rx, ack: None };
        let mut engine = Engine::new(session, policy, Box::new(user));
        if let Some(f) = &self.executor {
            engine = engine.with_executor(f());
        }
        let id = header.session_id.clone();
        std::thread::Builder::new()
            .name(format!("engine-{id}"))
            .spawn(move || {
                if let Err(e) = engine.run() {
                    tracing::error!(session = %id, error = %e, "engine stopped");
                }
            })
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(running)
    }

    fn running(&self, id: &str) -> Option<Arc<Running>> {
        self.running.lock().expect("registry lock").get(id).cloned()
    }

    /// The running engine of a session, resuming it if it is still open on
    /// disk but not running.
    fn live(&self, id: &str) -> Result<Arc<Running>, ApiError> {
        let record = self.load(id)?;
        let mut registry = self.running.lock().expect("registry lock");
        if let Some(r) = registry.get(id) {
            return Ok(r.clone());
        }
        if record.status() != SessionStatus::Active {
            return Err(ApiError::Conflict(format!("session `{id}` is closed")));
        }
        let session = LiveSession::open(&self.store.workdir(id), true, Clock::System)?;
        let running = self.launch(session)?;
        registry.insert(id.to_string(), running.clone());
        Ok(running)
    }

    fn load(&self, id: &str) -> Result<SessionRecord, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::NotFound(format!("unknown session `{id}`")));
        }
        if let Some(r) = self.running(id) {
            return Ok(r.shared.read().expect("session lock").clone());
        }
        match self.store.load(id) {
            Ok(r) => Ok(r),
            Err(StoreError::UnknownSession(_)) => Err(ApiError::NotFound(format!("unknown session `{id}`"))),
            Err(StoreError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::NotFound(format!("unknown session `{id}`"))),
            Err(e) => Err(e.into()),
        }
    }

    /// Hands a reply to the engine and waits until it has been recorded.
    async fn deliver(&self, id: &str, expect: impl Fn(&UserRequest) -> Result<(), String>, reply: UserReply) -> Result<u64, ApiError> {
        let running = self.live(id)?;
        let pending = running.shared.read().expect("session lock").pending().cloned();
        let Some((seq, request)) = pending else {
            return Err(ApiError::Conflict("nothing is waiting for the user".into()));
        };
        expect(&request).map_err(ApiError::Conflict)?;
        let (ack_tx, ack_rx) = oneshot::channel();
        running
            .inbox
            .send(Inbound { pending_seq: seq, reply, ack: ack_tx })
            .map_err(|_| ApiError::Conflict("the session is no longer running".into()))?;
        match tokio::time::timeout(ACK_TIMEOUT, ack_rx).await {
            Ok(Ok(Ok(()))) => Ok(seq),
            Ok(Ok(Err(e))) => Err(ApiError::Conflict(e)),
            Ok(Err(_)) => Ok(seq),
            Err(_) => Err(ApiError::internal("the engine did not record the reply in time")),
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn internal(m: impl Into<String>) -> Self {
        ApiError::Internal(m.into())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::DatasetName(_) | StoreError::Plan(_) => ApiError::BadRequest(e.to_string()),
            StoreError::UnknownSession(_) => ApiError::NotFound(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/message", post(message))
        .route("/sessions/{id}/validate", post(validate))
        .route("/sessions/{id}/plan", get(plan))
        .route("/sessions/{id}/files", get(files))
        .route("/sessions/{id}/files/{hash}", get(file_blob))
        .route("/sessions/{id}/diff/{seq}", get(diff))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionSummary {
    pub session_id: String,
    pub created_at: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub events: usize,
    pub pending: Option<String>,
}

fn summary(record: &SessionRecord) -> Option<SessionSummary> {
    let h = record.header()?;
    Some(SessionSummary {
        session_id: h.session_id.clone(),
        created_at: h.created_at.clone(),
        mode: h.mode,
        status: record.status(),
        events: record.events().len(),
        pending: record.pending().map(|(_, r)| r.kind().to_string()),
    })
}

async fn list_sessions(State(s): State<AppState>) -> Result<Json<Vec<SessionSummary>>, ApiError> {
    let out = s.store.list().iter().filter_map(|id| s.load(id).ok()).filter_map(|r| summary(&r)).collect();
    Ok(Json(out))
}

/// Multipart fields: `dataset` (file, required), and optionally `mode`,
/// `seed`, `problem_statement` and `plan` (a plan document).
async fn create_session(State(s): State<AppState>, mut form: Multipart) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let mut dataset: Option<(String, Vec<u8>)> = None;
    let mut spec = NewSession::new("data.csv", Vec::new());
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        match name.as_str() {
            "dataset" => dataset = Some((file_name.unwrap_or_else(|| "data.csv".into()), bytes.to_vec())),
            "mode" => spec.mode = SessionMode::parse(&text()).ok_or_else(|| ApiError::BadRequest(format!("unknown mode `{}`", text())))?,
            "seed" => spec.seed = text().parse().map_err(|_| ApiError::BadRequest("seed must be an integer".into()))?,
            "problem_statement" => spec.problem_statement = text(),
            "plan" => spec.plan_document = String::from_utf8_lossy(&bytes).into_owned(),
            other => return Err(ApiError::BadRequest(format!("unexpected field `{other}`"))),
        }
    }
    let (name, bytes) = dataset.ok_or_else(|| ApiError::BadRequest("missing `dataset` file".into()))?;
    spec.dataset_name = name;
    spec.dataset_bytes = bytes;
    if spec.mode == SessionMode::Baseline {
        spec.episode_config = crate::reasoning::EpisodeConfig::unguarded();
    }
    let store = s.store.clone();
    let session = tokio::task::spawn_blocking(move || store.create(spec)).await.map_err(|e| ApiError::internal(e.to_string()))??;
    let record = {
        let mut registry = s.running.lock().expect("registry lock");
        let running = s.launch(session)?;
        let record = running.shared.read().expect("session lock").clone();
        registry.insert(record.session_id().to_string(), running);
        record
    };
    Ok((StatusCode::CREATED, Json(summary(&record).expect("created sessions have a header"))))
}

#[derive(Debug, Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn events(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<Since>) -> Result<Json<Vec<SessionEvent>>, ApiError> {
    let record = s.load(&id)?;
    Ok(Json(record.events_since(q.since).to_vec()))
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: String,
}

async fn message(State(s): State<AppState>, Path(id): Path<String>, Json(body): Json<MessageBody>) -> Result<Json<Value>, ApiError> {
    s.load(&id)?;
    let seq = s.deliver(&id, |_| Ok(()), UserReply::Answer(body.text)).await?;
    Ok(Json(json!({"answered": seq})))
}

#[derive(Debug, Deserialize)]
struct ValidateBody {
    subtask_id: String,
    reward: u8,
    #[serde(default)]
    comment: Option<String>,
}

async fn validate(State(s): State<AppState>, Path(id): Path<String>, Json(body): Json<ValidateBody>) -> Result<Json<Value>, ApiError> {
    s.load(&id)?;
    let approved = match body.reward {
        0 => false,
        1 => true,
        _ => return Err(ApiError::BadRequest("reward must be 0 or 1".into())),
    };
    let wanted = body.subtask_id.clone();
    let expect = move |r: &UserRequest| match r {
        UserRequest::Validation { subtask_id, .. } if *subtask_id == wanted => Ok(()),
        UserRequest::Validation { subtask_id, .. } => Err(format!("validation is pending for `{subtask_id}`, not `{wanted}`")),
        other => Err(format!("the pending request is a {}, not a validation", other.kind())),
    };
    let reply = UserReply::Validate { approved, comment: body.comment };
    let seq = s.deliver(&id, expect, reply).await?;
    Ok(Json(json!({"answered": seq})))
}

async fn plan(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let record = s.load(&id)?;
    let Some(plan) = record.plan() else {
        return Err(ApiError::NotFound("session has no plan".into()));
    };
    Ok(Json(json!({
        "progress": plan.progress_snapshot(),
        "state": plan.data(),
        "next": record.last_next(),
        "pending": record.pending().map(|(seq, r)| json!({"seq": seq, "request": r, "prompt": r.prompt_text()})),
        "status": record.status(),
    })))
}

async fn files(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let record = s.load(&id)?;
    Ok(Json(json!(record.files())))
}

async fn file_blob(State(s): State<AppState>, Path((id, hash)): Path<(String, String)>) -> Result<Response, ApiError> {
    s.load(&id)?;
    if hash.len() != 64 || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(ApiError::BadRequest("not a content hash".into()));
    }
    let blobs = super::store::BlobDir::of_workdir(&s.store.workdir(&id));
    let bytes = blobs.get_blob(&hash).ok_or_else(|| ApiError::NotFound(format!("no blob {hash}")))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], Bytes::from(bytes)).into_response())
}

async fn diff(State(s): State<AppState>, Path((id, seq)): Path<(String, u64)>) -> Result<Json<Value>, ApiError> {
    let record = s.load(&id)?;
    match record.event(seq).map(|e| &e.body) {
        Some(EventBody::DataDiff { episode, before, after, diff }) => {
            Ok(Json(json!({"seq": seq, "episode": episode, "before": before, "after": after, "diff": diff, "summary": diff.summary()})))
        }
        Some(_) => Err(ApiError::NotFound(format!("event {seq} is not a data diff"))),
        None => Err(ApiError::NotFound(format!("no event {seq}"))),
    }
}

async fn stream(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<Since>, ws: WebSocketUpgrade) -> Result<Response, ApiError> {
    let record = s.load(&id)?;
    let live = if record.status() == SessionStatus::Active { s.live(&id).ok() } else { None };
    Ok(ws.on_upgrade(move |socket| push_events(socket, record, live, q.since)))
}

/// Sends the backlog after `since`, then live events, each exactly once.
async fn push_events(mut socket: WebSocket, snapshot: SessionRecord, live: Option<Arc<Running>>, since: u64) {
    // Subscribe before reading the backlog so nothing falls in between.
    let mut rx = live.as_ref().map(|r| r.events.subscribe());
    let backlog = match &live {
        Some(r) => r.shared.read().expect("session lock").events_since(since).to_vec(),
        None => snapshot.events_since(since).to_vec(),
    };
    let mut last = since;
    for e in backlog {
        last = e.seq;
        if socket.send(Message::Text(serde_json::to_string(&e).expect("events serialize").into())).await.is_err() {
            return;
        }
    }
    let Some(rx) = rx.as_mut() else {
        let _ = socket.send(Message::Close(None)).await;
        return;
    };
    loop {
        tokio::select! {
            got = rx.recv() => match got {
                Ok(e) if e.seq <= last => continue,
                Ok(e) => {
                    last = e.seq;
                    let closed = matches!(e.body, EventBody::SessionClosed { .. });
                    if socket.send(Message::Text(serde_json::to_string(&e).expect("events serialize").into())).await.is_err() {
                        return;
                    }
                    if closed {
                        let _ = socket.send(Message::Close(None)).await;
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let missed = live.as_ref().map(|r| r.shared.read().expect("session lock").events_since(last).to_vec()).unwrap_or_default();
                    for e in missed {
                        last = e.seq;
                        if socket.send(Message::Text(serde_json::to_string(&e).expect("events serialize").into())).await.is_err() {
                            return;
                        }
                    }
                }
                Err(broadcast::error::RecvError::Closed) => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                _ => {}
            },
        }
    }
}

/// Serves the API until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
