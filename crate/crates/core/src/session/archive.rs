//! Single-file session archives: the verbatim log plus every blob it refers to.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::store::{sha256_hex, BlobDir, Blobs, SessionStore, StoreError};
use super::{EventBody, FoldError, SessionRecord};

pub const ARCHIVE_FORMAT: &str = "climb-archive/1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("archive integrity check failed: {0}")]
    Integrity(String),
    #[error("unsupported archive format `{0}`")]
    Format(String),
    #[error("archived log does not replay: {0}")]
    Replay(#[from] FoldError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archive {
    pub format: String,
    pub session_id: String,
    pub checksum: String,
    /// The event log exactly as written.
    pub events: String,
    /// Blob contents, hex encoded, by hash.
    pub blobs: BTreeMap<String, String>,
}

/// Every blob hash the log refers to.
pub fn referenced_blobs(record: &SessionRecord) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for ev in record.events() {
        match &ev.body {
            EventBody::FileIndexed { hash, .. }
            | EventBody::ToolReportRef { hash, .. }
            | EventBody::ExecutionResultRef { hash, .. }
            | EventBody::ReportGenerated { hash, .. } => {
                out.insert(hash.clone());
            }
            EventBody::ModelFit(m) => {
                out.insert(m.hash.clone());
            }
            _ => {}
        }
    }
    out
}

fn checksum(session_id: &str, events: &str, blobs: &BTreeMap<String, String>) -> String {
    let mut text = format!("{ARCHIVE_FORMAT}\n{session_id}\n{}\n", sha256_hex(events.as_bytes()));
    for (h, data) in blobs {
        text.push_str(h);
        text.push(' ');
        text.push_str(&sha256_hex(data.as_bytes()));
        text.push('\n');
    }
    sha256_hex(text.as_bytes())
}

impl Archive {
    pub fn build(record: &SessionRecord, blobs: &dyn Blobs) -> Result<Self, ArchiveError> {
        let events = record.log_text();
        let mut map = BTreeMap::new();
        for h in referenced_blobs(record) {
            let bytes = blobs.get_blob(&h).ok_or_else(|| ArchiveError::Integrity(format!("blob {h} is missing from the store")))?;
            map.insert(h, hex::encode(bytes));
        }
        let session_id = record.session_id().to_string();
        let checksum = checksum(&session_id, &events, &map);
        Ok(Archive { format: ARCHIVE_FORMAT.into(), session_id, checksum, events, blobs: map })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("archive serializes");
        v.push(b'\n');
        v
    }

    /// Parses and fully verifies an archive, returning the replayed session
    /// and its decoded blobs.
    pub fn verify(bytes: &[u8]) -> Result<(SessionRecord, BTreeMap<String, Vec<u8>>), ArchiveError> {
        let a: Archive = serde_json::from_slice(bytes).map_err(|e| ArchiveError::Integrity(format!("not a readable archive ({e})")))?;
        if a.format != ARCHIVE_FORMAT {
            return Err(ArchiveError::Format(a.format));
        }
        if checksum(&a.session_id, &a.events, &a.blobs) != a.checksum {
            return Err(ArchiveError::Integrity("checksum mismatch".into()));
        }
        let mut blobs = BTreeMap::new();
        for (h, data) in &a.blobs {
            let bytes = hex::decode(data).map_err(|_| ArchiveError::Integrity(format!("blob {h} is not valid hex")))?;
            if &sha256_hex(&bytes) != h {
                return Err(ArchiveError::Integrity(format!("blob {h} does not match its hash")));
            }
            blobs.insert(h.clone(), bytes);
        }
        let record = SessionRecord::from_log(&a.events)?;
        if record.session_id() != a.session_id {
            return Err(ArchiveError::Integrity("session id does not match the log".into()));
        }
        if let Some(h) = referenced_blobs(&record).into_iter().find(|h| !blobs.contains_key(h)) {
            return Err(ArchiveError::Integrity(format!("blob {h} is referenced but not archived")));
        }
        Ok((record, blobs))
    }
}

/// Writes a session directory's archive to `out`.
pub fn persist(workdir: &Path, out: &Path) -> Result<Archive, ArchiveError> {
    let text = std::fs::read_to_string(workdir.join(super::EVENTS_FILE))?;
    let record = SessionRecord::from_log(&text)?;
    let archive = Archive::build(&record, &BlobDir::of_workdir(workdir))?;
    let tmp = out.with_extension("partial");
    std::fs::write(&tmp, archive.to_bytes())?;
    std::fs::rename(&tmp, out)?;
    Ok(archive)
}

/// Restores an archive into a store. Fails if a session with the same id
/// already exists there.
pub fn resume(store: &SessionStore, archive: &Path) -> Result<(SessionRecord, PathBuf), ArchiveError> {
    let bytes = std::fs::read(archive)?;
    let (record, blobs) = Archive::verify(&bytes)?;
    let dir = store.import(&record, &blobs)?;
    Ok((record, dir))
}
