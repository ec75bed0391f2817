//! Embedding backends: an HTTP batch endpoint for real models, a file-backed
//! replay backend for tests, and a caching wrapper keyed by
//! `(model_id, text digest)` that makes index builds resumable.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// A batch text-to-vector service. Implementations must be shareable across
/// worker threads.
pub trait EmbeddingBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Advertised output dimension; every returned vector must match it.
    fn dim(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

impl EmbeddingBackend for Box<dyn EmbeddingBackend> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

/// Configuration for [`HttpEmbeddingBackend`]. The auth token is read from an
/// environment variable, never stored in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEmbeddingConfig {
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

/// POSTs `{model, texts}` and reads `{vectors}`. Transport failures are
/// retried with exponential backoff up to the configured attempt count.
pub struct HttpEmbeddingBackend {
    config: HttpEmbeddingConfig,
    client: reqwest::blocking::Client,
    auth_token: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl HttpEmbeddingBackend {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self> {
        let auth_token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::config(format!("auth environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::config(format!("http client: {e}")))?;
        Ok(HttpEmbeddingBackend {
            config,
            client,
            auth_token,
        })
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut request = self.client.post(&self.config.endpoint).json(&EmbedRequest {
            model: &self.config.model,
            texts,
        });
        if let Some(token) = &self.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| Error::Backend {
            message: format!("embedding request failed: {e}"),
            retryable: true,
            attempts: 1,
        })?;
        let status = response.status();
        if status.is_server_error() {
            return Err(Error::Backend {
                message: format!("embedding endpoint returned {status}"),
                retryable: true,
                attempts: 1,
            });
        }
        if !status.is_success() {
            return Err(Error::Backend {
                message: format!("embedding endpoint returned {status}"),
                retryable: false,
                attempts: 1,
            });
        }
        let body: EmbedResponse = response.json().map_err(|e| Error::Backend {
            message: format!("embedding response body: {e}"),
            retryable: false,
            attempts: 1,
        })?;
        Ok(body.vectors)
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let raw = retry_with_backoff(self.config.max_attempts, self.config.backoff_ms, || {
            self.post_once(texts)
        })?;
        raw.into_iter().map(EmbeddingVector::new).collect()
    }
}

/// Runs `call` up to `max_attempts` times, doubling the delay between
/// retryable failures; the final error carries the attempt count.
pub(crate) fn retry_with_backoff<T>(
    max_attempts: u32,
    backoff_ms: u64,
    call: impl Fn() -> Result<T>,
) -> Result<T> {
    let max_attempts = max_attempts.max(1);
    let mut delay = backoff_ms;
    for attempt in 1..=max_attempts {
        match call() {
            Ok(value) => return Ok(value),
            Err(err) if err.is_retryable() && attempt < max_attempts => {
                std::thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
            Err(err) => {
                return Err(match err {
                    Error::Backend {
                        message, retryable, ..
                    } => Error::Backend {
                        message,
                        retryable,
                        attempts: attempt,
                    },
                    other => other,
                });
            }
        }
    }
    unreachable!("loop returns on the final attempt");
}

// ---------------------------------------------------------------------------
// Replay backend
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ReplayHeader {
    replay_embeddings: u32,
    model_id: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct ReplayRecord {
    text: String,
    vector: Vec<f32>,
}

/// Serves vectors from a fixture file keyed by exact text; errors on unknown
/// text so tests can never silently fall through to a live service.
pub struct ReplayEmbeddingBackend {
    model_id: String,
    dim: usize,
    by_text: HashMap<String, Vec<f32>>,
}

impl ReplayEmbeddingBackend {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::parse(path.display().to_string(), "missing header line"))?
            .map_err(|e| Error::io(path, e))?;
        let header: ReplayHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::parse(path.display().to_string(), format!("header: {e}")))?;
        if header.replay_embeddings != 1 {
            return Err(Error::CacheVersion {
                found: header.replay_embeddings.to_string(),
                expected: 1,
            });
        }
        let mut by_text = HashMap::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(
                    format!("{} line {}", path.display(), idx + 2),
                    e.to_string(),
                )
            })?;
            if record.vector.len() != header.dim {
                return Err(Error::validation(format!(
                    "replay fixture line {}: vector dim {} does not match header dim {}",
                    idx + 2,
                    record.vector.len(),
                    header.dim
                )));
            }
            by_text.insert(record.text, record.vector);
        }
        Ok(ReplayEmbeddingBackend {
            model_id: header.model_id,
            dim: header.dim,
            by_text,
        })
    }
}

impl EmbeddingBackend for ReplayEmbeddingBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|text| {
                let raw = self.by_text.get(text).ok_or_else(|| Error::Backend {
                    message: format!(
                        "replay fixture has no vector for text digest {}",
                        sha256_hex(text.as_bytes())
                    ),
                    retryable: false,
                    attempts: 1,
                })?;
                EmbeddingVector::new(raw.clone())
            })
            .collect()
    }
}

/// Writes a replay fixture file usable by [`ReplayEmbeddingBackend`].
pub fn write_replay_embedding_fixture(
    path: &Path,
    model_id: &str,
    dim: usize,
    entries: &[(String, Vec<f32>)],
) -> Result<()> {
    let mut out = String::new();
    let header = ReplayHeader {
        replay_embeddings: 1,
        model_id: model_id.to_string(),
        dim,
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for (text, vector) in entries {
        let record = ReplayRecord {
            text: text.clone(),
            vector: vector.clone(),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Caching wrapper
// ---------------------------------------------------------------------------

const EMBED_CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EmbedCacheHeader {
    embed_cache_version: u32,
    model_id: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct EmbedCacheRecord {
    digest: String,
    vector: Vec<f32>,
}

struct EmbedCacheState {
    by_digest: HashMap<String, Vec<f32>>,
    writer: std::io::BufWriter<fs::File>,
}

/// Wraps a backend with an append-only on-disk cache. A rebuild over already
/// cached texts performs zero inner backend calls.
pub struct CachedEmbeddingBackend<B> {
    inner: B,
    path: PathBuf,
    state: Mutex<EmbedCacheState>,
}

impl<B: EmbeddingBackend> CachedEmbeddingBackend<B> {
    pub fn open(inner: B, path: &Path) -> Result<Self> {
        let mut by_digest = HashMap::new();
        if path.exists() {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let mut lines = BufReader::new(file).lines();
            let header_line = lines
                .next()
                .ok_or_else(|| Error::parse(path.display().to_string(), "missing cache header"))?
                .map_err(|e| Error::io(path, e))?;
            let header: EmbedCacheHeader = serde_json::from_str(&header_line)
                .map_err(|e| Error::parse(path.display().to_string(), format!("header: {e}")))?;
            if header.embed_cache_version != EMBED_CACHE_VERSION {
                return Err(Error::CacheVersion {
                    found: header.embed_cache_version.to_string(),
                    expected: EMBED_CACHE_VERSION,
                });
            }
            if header.model_id != inner.model_id() || header.dim != inner.dim() {
                return Err(Error::config(format!(
                    "embedding cache {} was built for model '{}' (dim {}), not '{}' (dim {})",
                    path.display(),
                    header.model_id,
                    header.dim,
                    inner.model_id(),
                    inner.dim()
                )));
            }
            for line in lines {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: EmbedCacheRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
                by_digest.insert(record.digest, record.vector);
            }
        } else {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
            }
            let header = EmbedCacheHeader {
                embed_cache_version: EMBED_CACHE_VERSION,
                model_id: inner.model_id().to_string(),
                dim: inner.dim(),
            };
            let mut line = serde_json::to_string(&header).expect("header serializes");
            line.push('\n');
            fs::write(path, line).map_err(|e| Error::io(path, e))?;
        }

        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CachedEmbeddingBackend {
            inner,
            path: path.to_path_buf(),
            state: Mutex::new(EmbedCacheState {
                by_digest,
                writer: std::io::BufWriter::new(file),
            }),
        })
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedEmbeddingBackend<B> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let digests: Vec<String> = texts.iter().map(|t| sha256_hex(t.as_bytes())).collect();

        let missing: Vec<usize> = {
            let state = self.state.lock().unwrap();
            digests
                .iter()
                .enumerate()
                .filter(|(_, d)| !state.by_digest.contains_key(*d))
                .map(|(i, _)| i)
                .collect()
        };

        if !missing.is_empty() {
            let to_embed: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&to_embed)?;
            if fresh.len() != to_embed.len() {
                return Err(Error::Backend {
                    message: format!(
                        "backend returned {} vector(s) for {} text(s)",
                        fresh.len(),
                        to_embed.len()
                    ),
                    retryable: false,
                    attempts: 1,
                });
            }
            let mut state = self.state.lock().unwrap();
            for (&idx, vector) in missing.iter().zip(&fresh) {
                let digest = digests[idx].clone();
                if state.by_digest.contains_key(&digest) {
                    continue;
                }
                let record = EmbedCacheRecord {
                    digest: digest.clone(),
                    vector: vector.values().to_vec(),
                };
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(state.writer, "{line}").map_err(|e| Error::io(&self.path, e))?;
                state.writer.flush().map_err(|e| Error::io(&self.path, e))?;
                state.by_digest.insert(digest, vector.values().to_vec());
            }
        }

        let state = self.state.lock().unwrap();
        digests
            .iter()
            .map(|d| {
                let raw = state.by_digest.get(d).expect("digest cached above");
                EmbeddingVector::new(raw.clone())
            })
            .collect()
    }
}
