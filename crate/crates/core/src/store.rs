//! On-disk session store: append-only event logs and content-addressed artifacts.
//!
//! ```text
//! <root>/artifacts/<sha256>.png
//! <root>/sessions/index.jsonl          one {id, created} line per session
//! <root>/sessions/<id>/events.jsonl    one EventRecord per line
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::artifact::{artifact_path, content_hash, is_valid_hash, ArtifactRef};
use crate::error::{Error, Result};
use crate::event::{replay, EventRecord};
use crate::session::{SessionId, SessionState};

const EVENTS_FILE: &str = "events.jsonl";
const INDEX_FILE: &str = "index.jsonl";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: SessionId,
    pub created: DateTime<Utc>,
}

struct SessionLog {
    last_seq: u64,
    file: Option<File>,
    tx: broadcast::Sender<EventRecord>,
}

/// Drop a torn final line so the next append starts on a fresh line.
fn repair_tail(path: &Path) -> Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e.into()),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "truncating torn event line");
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    Ok(())
}

pub struct Store {
    root: PathBuf,
    sync: bool,
    logs: Mutex<HashMap<SessionId, Arc<Mutex<SessionLog>>>>,
    index: Mutex<()>,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("artifacts"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store {
            root,
            sync: true,
            logs: Mutex::new(HashMap::new()),
            index: Mutex::new(()),
        })
    }

    /// Skip fsync on append. Only for benchmarks.
    pub fn without_fsync(mut self) -> Store {
        self.sync = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &SessionId) -> PathBuf {
        self.root.join("sessions").join(id.as_str())
    }

    pub fn events_path(&self, id: &SessionId) -> PathBuf {
        self.session_dir(id).join(EVENTS_FILE)
    }

    // -- artifacts ---------------------------------------------------------

    /// Store bytes under their hash. Storing the same bytes again is a no-op.
    pub fn store_artifact(&self, bytes: &[u8], media_type: &str) -> Result<ArtifactRef> {
        if bytes.is_empty() {
            return Err(Error::validation("cannot store an empty artifact"));
        }
        let r = ArtifactRef::for_bytes(bytes, media_type);
        let path = self.root.join(&r.path);
        if !path.exists() {
            let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
            let tmp = path.with_extension(format!("tmp-{}-{n}", std::process::id()));
            {
                let mut f = File::create(&tmp)?;
                f.write_all(bytes)?;
                if self.sync {
                    f.sync_all()?;
                }
            }
            fs::rename(&tmp, &path)?;
        }
        Ok(r)
    }

    pub fn load_artifact(&self, hash: &str) -> Result<Vec<u8>> {
        if !is_valid_hash(hash) {
            return Err(Error::validation(format!("`{hash}` is not a sha256 hex digest")));
        }
        let mut bytes = Vec::new();
        File::open(self.root.join(artifact_path(hash)))?.read_to_end(&mut bytes)?;
        if content_hash(&bytes) != hash {
            return Err(Error::Storage(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("artifact {hash} does not match its hash"),
            )));
        }
        Ok(bytes)
    }

    pub fn load(&self, r: &ArtifactRef) -> Result<Vec<u8>> {
        self.load_artifact(&r.hash)
    }

    pub fn has_artifact(&self, hash: &str) -> bool {
        is_valid_hash(hash) && self.root.join(artifact_path(hash)).exists()
    }

    // -- events ------------------------------------------------------------

    fn log_for(&self, id: &SessionId) -> Result<Arc<Mutex<SessionLog>>> {
        let mut logs = self.logs.lock().unwrap();
        if let Some(l) = logs.get(id) {
            return Ok(l.clone());
        }
        repair_tail(&self.events_path(id))?;
        let last_seq = match self.read_events(id) {
            Ok(events) => events.last().map(|e| e.seq).unwrap_or(0),
            Err(Error::UnknownSession(_)) => 0,
            Err(e) => return Err(e),
        };
        let (tx, _) = broadcast::channel(1024);
        let log = Arc::new(Mutex::new(SessionLog {
            last_seq,
            file: None,
            tx,
        }));
        logs.insert(id.clone(), log.clone());
        Ok(log)
    }

    /// Append one record. Its `seq` must be exactly one past the last one.
    /// The line is flushed (and fsynced) before this returns.
    pub fn append_event(&self, record: &EventRecord) -> Result<()> {
        let id = &record.session_id;
        let log = self.log_for(id)?;
        let mut log = log.lock().unwrap();
        let expected = log.last_seq + 1;
        if record.seq != expected {
            return Err(Error::Sequence {
                session_id: id.to_string(),
                expected,
                actual: record.seq,
            });
        }
        if log.file.is_none() {
            let dir = self.session_dir(id);
            fs::create_dir_all(&dir)?;
            log.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(EVENTS_FILE))?,
            );
        }
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let file = log.file.as_mut().expect("opened above");
        file.write_all(line.as_bytes())?;
        if self.sync {
            file.sync_data()?;
        }
        log.last_seq = record.seq;
        if record.seq == 1 {
            self.append_index(&IndexEntry {
                id: id.clone(),
                created: record.ts,
            })?;
        }
        // No receivers is fine.
        let _ = log.tx.send(record.clone());
        Ok(())
    }

    fn append_index(&self, entry: &IndexEntry) -> Result<()> {
        let _guard = self.index.lock().unwrap();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join("sessions").join(INDEX_FILE))?;
        let mut line = serde_json::to_string(entry).expect("index entry serializes");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        if self.sync {
            f.sync_data()?;
        }
        Ok(())
    }

    /// All complete records of a session. A trailing line without its
    /// newline (a write cut short by a crash) is ignored.
    pub fn read_events(&self, id: &SessionId) -> Result<Vec<EventRecord>> {
        let path = self.events_path(id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(Error::UnknownSession(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut reader = BufReader::new(file);
        let mut out: Vec<EventRecord> = Vec::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 || !line.ends_with('\n') {
                break;
            }
            if line.trim().is_empty() {
                continue;
            }
            let rec: EventRecord = serde_json::from_str(&line).map_err(|e| Error::CorruptLog {
                session_id: id.to_string(),
                seq: out.last().map(|r| r.seq + 1).unwrap_or(1),
                message: e.to_string(),
            })?;
            out.push(rec);
        }
        if out.is_empty() {
            return Err(Error::UnknownSession(id.to_string()));
        }
        Ok(out)
    }

    pub fn replay_session(&self, id: &SessionId) -> Result<SessionState> {
        replay(&self.read_events(id)?)
    }

    pub fn session_exists(&self, id: &SessionId) -> bool {
        self.events_path(id).exists()
    }

    pub fn list_sessions(&self) -> Result<Vec<IndexEntry>> {
        let path = self.root.join("sessions").join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }

    /// Live feed of records appended after this call.
    pub fn subscribe(&self, id: &SessionId) -> Result<broadcast::Receiver<EventRecord>> {
        let log = self.log_for(id)?;
        let rx = log.lock().unwrap().tx.subscribe();
        Ok(rx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventKind, RequestPayload, SessionSettings};
    use crate::session::{CreativityLevel, GenerationRequest};

    fn rec(id: &SessionId, seq: u64) -> EventRecord {
        EventRecord::new(
            id,
            seq,
            EventKind::Request,
            &RequestPayload {
                request: GenerationRequest::new("cube", CreativityLevel::Low),
                settings: SessionSettings {
                    threshold: 8.0,
                    max_regen: 3,
                    width: 8,
                    height: 8,
                },
            },
            vec![],
        )
    }

    #[test]
    fn artifacts_are_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let a = store.store_artifact(b"hello", "image/png").unwrap();
        let b = store.store_artifact(b"hello", "image/png").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.load(&a).unwrap(), b"hello");
        assert_eq!(fs::read_dir(dir.path().join("artifacts")).unwrap().count(), 1);
        assert!(matches!(store.store_artifact(b"", "image/png"), Err(Error::Validation(_))));
    }

    #[test]
    fn sequence_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = SessionId::parse("abc").unwrap();
        store.append_event(&rec(&id, 1)).unwrap();
        let err = store.append_event(&rec(&id, 3)).unwrap_err();
        assert!(matches!(err, Error::Sequence { expected: 2, actual: 3, .. }));
        let err = store.append_event(&rec(&id, 1)).unwrap_err();
        assert!(matches!(err, Error::Sequence { expected: 2, actual: 1, .. }));
        assert_eq!(store.read_events(&id).unwrap().len(), 1);
    }

    #[test]
    fn torn_trailing_line_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = SessionId::parse("torn").unwrap();
        store.append_event(&rec(&id, 1)).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.events_path(&id)).unwrap();
        f.write_all(b"{\"ts\":\"2024").unwrap();
        assert_eq!(store.read_events(&id).unwrap().len(), 1);
        // A fresh store picks up the right sequence number.
        let again = Store::open(dir.path()).unwrap();
        assert!(again.append_event(&rec(&id, 3)).is_err());
        again.append_event(&rec(&id, 2)).unwrap();
        assert_eq!(again.read_events(&id).unwrap().len(), 2);
    }

    #[test]
    fn unknown_session() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let id = SessionId::parse("nope").unwrap();
        assert!(matches!(store.replay_session(&id), Err(Error::UnknownSession(_))));
    }
}
