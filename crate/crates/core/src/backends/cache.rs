use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::BackendError;

/// One cached model response, keyed by the digest of its request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_digest: String,
    pub response_text: String,
    /// Unix seconds at insertion.
    pub timestamp: u64,
}

/// Response cache backed by an append-only JSON-lines file.
///
/// Readers share an `RwLock`; writes are serialized through the file mutex
/// and flushed per entry. Per-digest locks make concurrent identical
/// requests wait for the first one instead of hitting the network twice.
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    file: Mutex<Option<File>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::new(HashMap::new()),
            file: Mutex::new(None),
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    /// Open (creating if needed) `<dir>/<backend_id>.jsonl`.
    pub fn open(dir: &Path, backend_id: &str) -> Result<Self, BackendError> {
        let io = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let safe: String = backend_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let path = dir.join(format!("{safe}.jsonl"));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.request_digest.clone(), e);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), n + 1),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(Self {
            path: Some(path),
            entries: RwLock::new(entries),
            file: Mutex::new(Some(file)),
            key_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(digest)
            .map(|e| e.response_text.clone())
    }

    pub fn insert(&self, digest: &str, response_text: &str) -> Result<(), BackendError> {
        let entry = CacheEntry {
            request_digest: digest.to_string(),
            response_text: response_text.to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        {
            let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(f) = file.as_mut() {
                let mut line = serde_json::to_string(&entry)
                    .map_err(|e| BackendError::Cache(e.to_string()))?;
                line.push('\n');
                f.write_all(line.as_bytes())
                    .and_then(|_| f.flush())
                    .map_err(|e| BackendError::Cache(e.to_string()))?;
            }
        }
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(entry.request_digest.clone(), entry);
        Ok(())
    }

    /// Return the cached text for `digest`, or run `fetch` once and cache it.
    pub fn get_or_fetch<F>(&self, digest: &str, fetch: F) -> Result<(String, bool), BackendError>
    where
        F: FnOnce() -> Result<String, BackendError>,
    {
        if let Some(hit) = self.get(digest) {
            return Ok((hit, true));
        }
        let lock = self
            .key_locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(digest.to_string())
            .or_default()
            .clone();
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(hit) = self.get(digest) {
            return Ok((hit, true));
        }
        let text = fetch()?;
        self.insert(digest, &text)?;
        Ok((text, false))
    }
}
