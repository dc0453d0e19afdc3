//! Coalition result cache keyed by `(mask, task-set fingerprint)`.
//!
//! Entries are opaque byte blobs (records-file text). With a backing directory
//! each entry is also written to `<dir>/<mask>-<fingerprint>`; files are written
//! to a temporary name and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::EvalError;
use crate::game::Coalition;

/// Stable hash of the sorted task id list (16 hex digits).
pub fn task_fingerprint<S: AsRef<str>>(tasks: &[S]) -> String {
    let mut ids: Vec<&str> = tasks.iter().map(AsRef::as_ref).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub mask: u64,
    pub fingerprint: String,
}

impl CacheKey {
    pub fn new<S: AsRef<str>>(coalition: Coalition, tasks: &[S]) -> Self {
        CacheKey {
            mask: coalition.mask(),
            fingerprint: task_fingerprint(tasks),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}-{}", self.mask, self.fingerprint)
    }
}

/// Thread-safe cache; concurrent inserts on one key resolve last-write-wins.
#[derive(Debug, Default)]
pub struct CoalitionCache {
    dir: Option<PathBuf>,
    entries: Mutex<HashMap<CacheKey, Arc<[u8]>>>,
}

impl CoalitionCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Cache persisted under `dir` (created if absent).
    pub fn persistent(dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| EvalError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(CoalitionCache {
            dir: Some(dir),
            entries: Mutex::default(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Arc<[u8]>>, EvalError> {
        if let Some(hit) = self.entries.lock().unwrap().get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(key.file_name());
        match fs::read(&path) {
            Ok(bytes) => {
                let bytes: Arc<[u8]> = bytes.into();
                self.entries
                    .lock()
                    .unwrap()
                    .insert(key.clone(), bytes.clone());
                Ok(Some(bytes))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(EvalError::Io {
                path: path.display().to_string(),
                source,
            }),
        }
    }

    pub fn put(&self, key: CacheKey, bytes: &[u8]) -> Result<(), EvalError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(key.file_name());
            static WRITES: AtomicU64 = AtomicU64::new(0);
            let tmp = dir.join(format!(
                ".{}.{}.{}.tmp",
                key.file_name(),
                std::process::id(),
                WRITES.fetch_add(1, Ordering::Relaxed)
            ));
            let io = |source| EvalError::Io {
                path: path.display().to_string(),
                source,
            };
            fs::write(&tmp, bytes).map_err(io)?;
            fs::rename(&tmp, &path).map_err(io)?;
        }
        self.entries.lock().unwrap().insert(key, bytes.into());
        Ok(())
    }

    /// Drops one entry from memory and disk.
    pub fn evict(&self, key: &CacheKey) -> Result<(), EvalError> {
        self.entries.lock().unwrap().remove(key);
        if let Some(dir) = &self.dir {
            let path = dir.join(key.file_name());
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => {
                    return Err(EvalError::Io {
                        path: path.display().to_string(),
                        source,
                    })
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
