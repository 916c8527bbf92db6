//! On-disk session persistence.
//!
//! Each session is a `<id>.json` snapshot plus an append-only
//! `<id>.events.jsonl` log. Snapshots are replaced atomically via rename.

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::assessment::{Event, SessionState};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("session id {0:?} is not a valid file name")]
    InvalidId(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// Ids double as file names: ASCII letters, digits, `-` and `_`, at most 128 long.
pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl SessionStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn check_id(id: &str) -> Result<(), StoreError> {
        if valid_session_id(id) {
            Ok(())
        } else {
            Err(StoreError::InvalidId(id.to_string()))
        }
    }

    pub fn session_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn events_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.events.jsonl"))
    }

    /// Writes the snapshot and appends events with `seq >= events_from`.
    /// Returns the sequence number to pass next time.
    pub fn commit(&self, state: &SessionState, events_from: u64) -> Result<u64, StoreError> {
        Self::check_id(&state.session_id)?;
        let new = state.events_since(events_from);
        if !new.is_empty() {
            let path = self.events_path(&state.session_id);
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
            let mut buf = Vec::new();
            for e in new {
                serde_json::to_writer(&mut buf, e).map_err(|source| StoreError::Json { path: path.clone(), source })?;
                buf.push(b'\n');
            }
            f.write_all(&buf).map_err(io_err(&path))?;
        }
        self.write_snapshot(state, false)?;
        Ok(state.events.len() as u64)
    }

    /// Writes only the snapshot, optionally with timestamps zeroed.
    pub fn write_snapshot(&self, state: &SessionState, deterministic: bool) -> Result<PathBuf, StoreError> {
        Self::check_id(&state.session_id)?;
        let path = self.session_path(&state.session_id);
        let tmp = self.dir.join(format!(".{}.json.tmp", state.session_id));
        fs::write(&tmp, state.to_json(deterministic)).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn load(&self, id: &str) -> Result<SessionState, StoreError> {
        Self::check_id(id)?;
        let path = self.session_path(id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        serde_json::from_str(&text).map_err(|source| StoreError::Json { path, source })
    }

    pub fn load_events(&self, id: &str) -> Result<Vec<Event>, StoreError> {
        Self::check_id(id)?;
        let path = self.events_path(id);
        let f = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|source| StoreError::Json { path: path.clone(), source })?);
        }
        Ok(out)
    }

    /// Ids of all stored sessions, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(io_err(&self.dir))? {
            let name = entry.map_err(io_err(&self.dir))?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".json") {
                if !id.starts_with('.') {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active_learning::StopRule;
    use crate::assessment::SessionState;
    use crate::domain::SessionConfig;

    #[test]
    fn round_trip_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let cfg = SessionConfig { n_stimuli: 6, stop: StopRule::FixedBudget { budget: 6 }, ..Default::default() };
        let mut s = SessionState::new("abc", cfg).unwrap();
        let mut next = store.commit(&s, 0).unwrap();
        for t in 0..3 {
            let sp = s.next_stimulus(t).unwrap().unwrap();
            s.submit_response(sp.id, 3.0, true, t).unwrap();
            next = store.commit(&s, next).unwrap();
        }
        assert_eq!(store.load("abc").unwrap(), s);
        assert_eq!(store.load_events("abc").unwrap(), s.events);
        assert_eq!(store.list().unwrap(), vec!["abc".to_string()]);
        assert!(matches!(store.load("nope"), Err(StoreError::NotFound(_))));
        assert!(matches!(store.load("../x"), Err(StoreError::InvalidId(_))));
    }
}
