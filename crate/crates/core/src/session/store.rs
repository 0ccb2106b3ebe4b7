//! Live sessions on disk: the durable log, the content-addressed blob store
//! and the working-directory file index.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EventBody, FoldError, SessionEvent, SessionHeader, SessionMode, SessionRecord, EVENTS_FILE};
use crate::codeexec::{self, prepare_workspace, PRIVATE_DIR};
use crate::plan::{CtxValue, PlanError};
use crate::reasoning::EpisodeConfig;
use crate::tools::data::DatasetProfile;
use crate::tools::Frame;

pub const SESSION_ROOT_ENV: &str = "CLIMB_SESSION_ROOT";
const LOGICAL_EPOCH: &str = "2000-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error(transparent)]
    Exec(#[from] codeexec::ExecError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("invalid dataset name `{0}`")]
    DatasetName(String),
    #[error("the session log could not be written; the session is read-only: {0}")]
    Broken(String),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Read access to stored blobs by hash.
pub trait Blobs {
    fn get_blob(&self, hash: &str) -> Option<Vec<u8>>;
}

impl Blobs for BTreeMap<String, Vec<u8>> {
    fn get_blob(&self, hash: &str) -> Option<Vec<u8>> {
        self.get(hash).cloned()
    }
}

#[derive(Debug, Clone)]
pub struct BlobDir(pub PathBuf);

impl BlobDir {
    pub fn of_workdir(workdir: &Path) -> Self {
        BlobDir(workdir.join(PRIVATE_DIR).join("blobs"))
    }

    pub fn put(&self, bytes: &[u8]) -> std::io::Result<String> {
        let hash = sha256_hex(bytes);
        let p = self.0.join(&hash);
        if !p.exists() {
            std::fs::create_dir_all(&self.0)?;
            let tmp = self.0.join(format!("{hash}.tmp"));
            std::fs::write(&tmp, bytes)?;
            std::fs::rename(&tmp, &p)?;
        }
        Ok(hash)
    }
}

impl Blobs for BlobDir {
    fn get_blob(&self, hash: &str) -> Option<Vec<u8>> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        std::fs::read(self.0.join(hash)).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    /// Timestamps derived from sequence numbers, for reproducible logs.
    Logical,
}

impl Clock {
    fn stamp(self, seq: u64) -> String {
        match self {
            Clock::System => Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            Clock::Logical => {
                let base: DateTime<Utc> = LOGICAL_EPOCH.parse().expect("valid epoch");
                (base + Duration::seconds(seq as i64)).to_rfc3339_opts(SecondsFormat::Millis, true)
            }
        }
    }
}

type Observer = Box<dyn Fn(&SessionEvent) + Send + Sync>;

/// A session being written. All appends go through `append`, which folds
/// the event and makes it durable before any reader or observer sees it.
pub struct LiveSession {
    shared: Arc<RwLock<SessionRecord>>,
    workdir: PathBuf,
    log: Option<File>,
    fsync: bool,
    clock: Clock,
    blobs: BlobDir,
    observers: Vec<Observer>,
    broken: Option<String>,
}

impl std::fmt::Debug for LiveSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveSession").field("workdir", &self.workdir).finish_non_exhaustive()
    }
}

/// Everything needed to start a session.
#[derive(Debug, Clone)]
pub struct NewSession {
    pub session_id: Option<String>,
    pub mode: SessionMode,
    pub seed: u64,
    pub problem_statement: String,
    pub dataset_name: String,
    pub dataset_bytes: Vec<u8>,
    pub plan_document: String,
    pub episode_config: EpisodeConfig,
    pub max_attempts: u32,
    pub policy: String,
    /// Write `events.log` (with fsync). Off for throwaway sessions.
    pub durable: bool,
    pub clock: Clock,
}

impl NewSession {
    pub fn new(dataset_name: &str, dataset_bytes: Vec<u8>) -> Self {
        NewSession {
            session_id: None,
            mode: SessionMode::Climb,
            seed: 0,
            problem_statement: String::new(),
            dataset_name: dataset_name.into(),
            dataset_bytes,
            plan_document: crate::plan::default_plan_document().into(),
            episode_config: EpisodeConfig::default(),
            max_attempts: crate::plan::DEFAULT_MAX_ATTEMPTS,
            policy: "scripted".into(),
            durable: true,
            clock: Clock::System,
        }
    }
}

fn clean_dataset_name(name: &str) -> Result<String, StoreError> {
    let base = Path::new(name).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if base.is_empty() || base.starts_with('.') || base == EVENTS_FILE {
        return Err(StoreError::DatasetName(name.into()));
    }
    Ok(base)
}

fn new_session_id(seed: u64, clock: Clock) -> String {
    match clock {
        Clock::Logical => format!("s{seed:08}"),
        Clock::System => format!("s{}-{:08x}", Utc::now().format("%Y%m%d%H%M%S"), rand::random::<u32>()),
    }
}

/// Text describing a dataset for the initial state.
pub fn profile_text(bytes: &[u8]) -> String {
    match Frame::parse(&String::from_utf8_lossy(bytes)) {
        Ok(f) => DatasetProfile::of(&f).to_text(),
        Err(e) => format!("The dataset could not be parsed: {e}"),
    }
}

impl LiveSession {
    /// Opens a session directory and replays its log.
    pub fn open(workdir: &Path, fsync: bool, clock: Clock) -> Result<Self, StoreError> {
        let path = workdir.join(EVENTS_FILE);
        let text = std::fs::read_to_string(&path)?;
        let record = SessionRecord::from_log(&text)?;
        let log = OpenOptions::new().append(true).open(&path)?;
        Ok(LiveSession {
            shared: Arc::new(RwLock::new(record)),
            workdir: workdir.to_path_buf(),
            log: Some(log),
            fsync,
            clock,
            blobs: BlobDir::of_workdir(workdir),
            observers: Vec::new(),
            broken: None,
        })
    }

    pub fn create(root: &Path, params: NewSession) -> Result<Self, StoreError> {
        let id = params.session_id.clone().unwrap_or_else(|| new_session_id(params.seed, params.clock));
        let dataset = clean_dataset_name(&params.dataset_name)?;
        crate::plan::load_plan(&params.plan_document)?;
        let ws = prepare_workspace(root, &id)?;
        std::fs::write(ws.dir.join(&dataset), &params.dataset_bytes)?;
        let log = if params.durable {
            Some(OpenOptions::new().create_new(true).append(true).open(ws.dir.join(EVENTS_FILE))?)
        } else {
            None
        };
        let mut s = LiveSession {
            shared: Arc::new(RwLock::new(SessionRecord::new())),
            workdir: ws.dir.clone(),
            log,
            fsync: params.durable,
            clock: params.clock,
            blobs: BlobDir::of_workdir(&ws.dir),
            observers: Vec::new(),
            broken: None,
        };
        let header = SessionHeader {
            session_id: id,
            created_at: params.clock.stamp(0),
            mode: params.mode,
            seed: params.seed,
            problem_statement: params.problem_statement,
            dataset_path: dataset.clone(),
            dataset_profile: profile_text(&params.dataset_bytes),
            plan_document: params.plan_document,
            episode_config: params.episode_config,
            max_attempts: params.max_attempts,
            policy: params.policy,
        };
        s.append(EventBody::SessionCreated(Box::new(header)))?;
        s.index_files()?;
        for key in ["dataset_path", "original_dataset_path"] {
            s.append(EventBody::ContextUpdate { key: key.into(), value: CtxValue::Text(dataset.clone()) })?;
        }
        Ok(s)
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn blobs(&self) -> &BlobDir {
        &self.blobs
    }

    pub fn shared(&self) -> Arc<RwLock<SessionRecord>> {
        self.shared.clone()
    }

    pub fn record(&self) -> RwLockReadGuard<'_, SessionRecord> {
        self.shared.read().expect("session lock")
    }

    pub fn observe(&mut self, f: impl Fn(&SessionEvent) + Send + Sync + 'static) {
        self.observers.push(Box::new(f));
    }

    /// Folds and durably appends an event, then notifies observers.
    pub fn append(&mut self, body: EventBody) -> Result<SessionEvent, StoreError> {
        if let Some(b) = &self.broken {
            return Err(StoreError::Broken(b.clone()));
        }
        let event = {
            let mut rec = self.shared.write().expect("session lock");
            let seq = rec.next_seq();
            let event = SessionEvent { seq, timestamp: self.clock.stamp(seq), body };
            let line = serde_json::to_string(&event).expect("events serialize");
            rec.apply_line(line.clone(), event.clone())?;
            if let Some(log) = self.log.as_mut() {
                let written = log.write_all(format!("{line}\n").as_bytes()).and_then(|_| if self.fsync { log.sync_data() } else { Ok(()) });
                if let Err(e) = written {
                    // The in-memory state is now ahead of the disk.
                    self.broken = Some(e.to_string());
                    return Err(StoreError::Broken(e.to_string()));
                }
            }
            event
        };
        for o in &self.observers {
            o(&event);
        }
        Ok(event)
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        Ok(self.blobs.put(bytes)?)
    }

    /// Records new, changed and removed workdir files. Returns the paths
    /// indexed (new or changed).
    pub fn index_files(&mut self) -> Result<Vec<String>, StoreError> {
        let now = codeexec::scan(&self.workdir);
        let known = self.record().files().clone();
        let mut changed = Vec::new();
        for (path, hash) in &now {
            if hash.starts_with("link:") {
                continue;
            }
            if known.get(path).is_some_and(|e| &e.hash == hash) {
                continue;
            }
            let bytes = std::fs::read(self.workdir.join(path))?;
            let h = self.put_blob(&bytes)?;
            self.append(EventBody::FileIndexed { path: path.clone(), hash: h, size: bytes.len() as u64 })?;
            changed.push(path.clone());
        }
        for path in known.keys() {
            if !now.contains_key(path) {
                self.append(EventBody::FileRemoved { path: path.clone() })?;
            }
        }
        Ok(changed)
    }
}

/// Sessions under one root directory, one subdirectory each.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(SessionStore { root })
    }

    /// Root from `CLIMB_SESSION_ROOT`, else `./sessions`.
    pub fn from_env() -> std::io::Result<Self> {
        Self::new(std::env::var(SESSION_ROOT_ENV).unwrap_or_else(|_| "sessions".into()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn workdir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn create(&self, params: NewSession) -> Result<LiveSession, StoreError> {
        LiveSession::create(&self.root, params)
    }

    pub fn open(&self, id: &str) -> Result<LiveSession, StoreError> {
        let dir = self.workdir(id);
        if !dir.join(EVENTS_FILE).exists() {
            return Err(StoreError::UnknownSession(id.into()));
        }
        LiveSession::open(&dir, true, Clock::System)
    }

    /// Replays a stored session without opening it for writing.
    pub fn load(&self, id: &str) -> Result<SessionRecord, StoreError> {
        let p = self.workdir(id).join(EVENTS_FILE);
        let text = std::fs::read_to_string(&p).map_err(|_| StoreError::UnknownSession(id.into()))?;
        Ok(SessionRecord::from_log(&text)?)
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = std::fs::read_dir(&self.root)
            .map(|rd| {
                rd.flatten()
                    .filter(|e| e.path().join(EVENTS_FILE).exists())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .collect()
            })
            .unwrap_or_default();
        ids.sort();
        ids
    }

    /// Writes an archived session into this store: log, blobs and the
    /// latest version of every indexed file.
    pub fn import(&self, record: &SessionRecord, blobs: &BTreeMap<String, Vec<u8>>) -> Result<PathBuf, StoreError> {
        let id = record.session_id().to_string();
        let ws = prepare_workspace(&self.root, &id)?;
        let store = BlobDir::of_workdir(&ws.dir);
        for bytes in blobs.values() {
            store.put(bytes)?;
        }
        for (path, entry) in record.files() {
            let target = crate::tools::resolve_inside(&ws.dir, path).map_err(|e| StoreError::Io(std::io::Error::other(e.to_string())))?;
            if let Some(bytes) = blobs.get(&entry.hash) {
                if let Some(parent) = target.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(target, bytes)?;
            }
        }
        let mut f = File::create(ws.dir.join(EVENTS_FILE))?;
        f.write_all(record.log_text().as_bytes())?;
        f.sync_all()?;
        Ok(ws.dir)
    }
}
