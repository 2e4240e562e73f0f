use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Event, Session, SessionError, SCHEMA_VERSION};
use crate::synthgen::SyntheticExample;

pub const SESSION_FILE: &str = "session.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";

/// One directory per session under a root directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

/// Listing row for a stored session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub updated_at: chrono::DateTime<chrono::Utc>,
    pub task: String,
    pub versions: usize,
    pub best_combined: Option<f64>,
    pub unresolved_feedback: usize,
}

impl SessionSummary {
    pub fn of(s: &Session) -> Self {
        Self {
            id: s.id.clone(),
            created_at: s.created_at,
            updated_at: s.updated_at,
            task: s.spec.task_text().to_string(),
            versions: s.versions.len(),
            best_combined: s.versions.last().map(|v| v.evaluation.combined),
            unresolved_feedback: s.unresolved_count(),
        }
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Storage(format!("{}: {e}", path.display()))
}

/// Writes through a sibling temp file and a rename, so readers never see a
/// half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| storage(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("serializable") + "\n").collect()
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionError> {
    let raw = fs::read_to_string(path).map_err(|e| storage(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| storage(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Session ids are path components; only plain ids are accepted.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl SessionStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| storage(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.dir(id).join(SESSION_FILE).is_file()
    }

    pub fn persist(&self, session: &Session) -> Result<(), SessionError> {
        if !valid_id(&session.id) {
            return Err(SessionError::Storage(format!("invalid session id {:?}", session.id)));
        }
        let dir = self.dir(&session.id);
        fs::create_dir_all(&dir).map_err(|e| storage(&dir, e))?;

        let mut doc = serde_json::to_value(session).map_err(|e| storage(&dir, e))?;
        if let Some(examples) = doc.pointer_mut("/dataset/examples") {
            *examples = serde_json::Value::Array(Vec::new());
        }
        let body = serde_json::to_vec_pretty(&doc).map_err(|e| storage(&dir, e))?;

        write_atomic(&dir.join(DATASET_FILE), jsonl(&session.dataset.examples).as_bytes())?;
        write_atomic(&dir.join(EVENTS_FILE), jsonl(&session.event_log).as_bytes())?;
        // The state document goes last so a visible session.json implies
        // complete companions.
        write_atomic(&dir.join(SESSION_FILE), &body)
    }

    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        if !self.exists(id) {
            return Err(SessionError::NotFound(id.to_string()));
        }
        let dir = self.dir(id);
        let path = dir.join(SESSION_FILE);
        let raw = fs::read(&path).map_err(|e| storage(&path, e))?;
        let doc: serde_json::Value = serde_json::from_slice(&raw).map_err(|e| storage(&path, e))?;
        let found = doc.get("schema_version").and_then(serde_json::Value::as_u64);
        if found != Some(u64::from(SCHEMA_VERSION)) {
            return Err(SessionError::SchemaVersionMismatch { found, expected: SCHEMA_VERSION });
        }
        let mut session: Session = serde_json::from_value(doc).map_err(|e| storage(&path, e))?;
        session.dataset.examples = read_jsonl::<SyntheticExample>(&dir.join(DATASET_FILE))?;
        session.event_log = read_jsonl::<Event>(&dir.join(EVENTS_FILE))?;
        if session.id != id {
            return Err(storage(&path, format!("holds session {:?}", session.id)));
        }
        Ok(session)
    }

    /// Ids of stored sessions, sorted.
    pub fn ids(&self) -> Result<Vec<String>, SessionError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| storage(&self.root, e))? {
            let entry = entry.map_err(|e| storage(&self.root, e))?;
            if let Some(name) = entry.file_name().to_str() {
                if self.exists(name) {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Summaries ordered by creation time, then id. Unreadable sessions are
    /// skipped with a warning.
    pub fn list(&self) -> Result<Vec<SessionSummary>, SessionError> {
        let mut out = Vec::new();
        for id in self.ids()? {
            match self.load(&id) {
                Ok(s) => out.push(SessionSummary::of(&s)),
                Err(e) => tracing::warn!(id = %id, error = %e, "skipping unreadable session"),
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}
