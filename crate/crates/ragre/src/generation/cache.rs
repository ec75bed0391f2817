//! Append-only response cache keyed by (backend id, decode-params digest,
//! prompt digest). A completed run re-executed with the same config performs
//! zero backend calls.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RESPONSE_CACHE_VERSION: u32 = 1;

/// Composite cache key. Serialized as a JSON triple so no field separator
/// can collide with backend ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend_id: String,
    pub params_digest: String,
    pub prompt_digest: String,
}

impl CacheKey {
    fn as_string(&self) -> String {
        serde_json::to_string(&[
            self.backend_id.as_str(),
            self.params_digest.as_str(),
            self.prompt_digest.as_str(),
        ])
        .expect("key serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    response_cache_version: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    text: String,
    latency_ms: u64,
    created_at: u64,
}

/// A cached response body and the latency of the original call.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedResponse {
    pub text: String,
    pub latency_ms: u64,
}

struct CacheState {
    entries: HashMap<String, CachedResponse>,
    writer: std::io::BufWriter<fs::File>,
}

/// File-backed response cache. Writes are serialized internally; lookups and
/// inserts are safe from concurrent workers.
pub struct ResponseCache {
    path: PathBuf,
    state: Mutex<CacheState>,
}

/// Opens (or creates) a response cache at `path`.
pub fn open_cache(path: &Path) -> Result<ResponseCache> {
    let mut entries = HashMap::new();
    if path.exists() {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing cache header"))?
            .map_err(|e| Error::io(path, e))?;
        let header: CacheHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::parse(path.display().to_string(), format!("header: {e}")))?;
        if header.response_cache_version != RESPONSE_CACHE_VERSION {
            return Err(Error::CacheVersion {
                found: header.response_cache_version.to_string(),
                expected: RESPONSE_CACHE_VERSION,
            });
        }
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(
                    format!("{} line {}", path.display(), idx + 2),
                    e.to_string(),
                )
            })?;
            entries.insert(
                record.key,
                CachedResponse {
                    text: record.text,
                    latency_ms: record.latency_ms,
                },
            );
        }
    } else {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let header = CacheHeader {
            response_cache_version: RESPONSE_CACHE_VERSION,
        };
        let mut line = serde_json::to_string(&header).expect("header serializes");
        line.push('\n');
        fs::write(path, line).map_err(|e| Error::io(path, e))?;
    }

    let file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(ResponseCache {
        path: path.to_path_buf(),
        state: Mutex::new(CacheState {
            entries,
            writer: std::io::BufWriter::new(file),
        }),
    })
}

impl ResponseCache {
    pub fn lookup(&self, key: &CacheKey) -> Option<CachedResponse> {
        let state = self.state.lock().unwrap();
        state.entries.get(&key.as_string()).cloned()
    }

    /// Inserts unless the key is already present (at-most-once per key).
    /// Each record is flushed immediately so interrupted runs keep every
    /// completed response.
    pub fn insert(&self, key: &CacheKey, text: &str, latency_ms: u64) -> Result<()> {
        let key_string = key.as_string();
        let mut state = self.state.lock().unwrap();
        if state.entries.contains_key(&key_string) {
            return Ok(());
        }
        let record = CacheRecord {
            key: key_string.clone(),
            text: text.to_string(),
            latency_ms,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(state.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
        state.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        state.entries.insert(
            key_string,
            CachedResponse {
                text: text.to_string(),
                latency_ms,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
