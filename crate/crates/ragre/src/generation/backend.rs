//! Generation backends: a chat-completions HTTP client, a fixture-driven
//! replay backend (tests never hit the network), and the echo-gold backend
//! that returns the retrieved example's gold label for end-to-end checks.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::DecodeParams;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// One generation request. `example_gold` is pipeline-threaded metadata: the
/// gold label of the retrieved example, when the prompt has one.
#[derive(Debug, Clone, Copy)]
pub struct GenRequest<'a> {
    pub prompt: &'a str,
    pub example_gold: Option<&'a str>,
}

/// A language-model completion service, shareable across worker threads.
/// `complete` performs a single attempt; retry policy lives in the caller.
pub trait GenerationBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn complete(&self, request: &GenRequest<'_>, params: &DecodeParams) -> Result<String>;
}

// ---------------------------------------------------------------------------
// http-chat
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpChatConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

/// POSTs `{model, messages, temperature, max_tokens}` to a
/// chat-completions-style endpoint and reads the first choice's text.
pub struct HttpChatBackend {
    config: HttpChatConfig,
    backend_id: String,
    client: reqwest::blocking::Client,
    auth_token: Option<String>,
}

impl HttpChatBackend {
    pub fn new(config: HttpChatConfig) -> Result<Self> {
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
        let backend_id = format!("http-chat/{}", config.model);
        Ok(HttpChatBackend {
            config,
            backend_id,
            client,
            auth_token,
        })
    }
}

impl GenerationBackend for HttpChatBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, request: &GenRequest<'_>, params: &DecodeParams) -> Result<String> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if !params.stop_sequences.is_empty() {
            body["stop"] = json!(params.stop_sequences);
        }

        let mut http = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.auth_token {
            http = http.bearer_auth(token);
        }
        let response = http.send().map_err(|e| Error::Backend {
            message: format!("chat request failed: {e}"),
            retryable: true,
            attempts: 1,
        })?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Error::Backend {
                message: format!("chat endpoint returned {status}"),
                retryable: true,
                attempts: 1,
            });
        }
        if !status.is_success() {
            return Err(Error::Backend {
                message: format!("chat endpoint returned {status}"),
                retryable: false,
                attempts: 1,
            });
        }

        let parsed: serde_json::Value = response.json().map_err(|e| Error::Backend {
            message: format!("chat response body: {e}"),
            retryable: false,
            attempts: 1,
        })?;
        let first = parsed
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::EmptyResponse {
                backend_id: self.backend_id.clone(),
            })?;
        // Chat style nests the text under message.content; completion style
        // puts it at choice.text. An explicit "" is a valid empty string; a
        // missing field is an empty-response error.
        let text = first
            .pointer("/message/content")
            .and_then(|v| v.as_str())
            .or_else(|| first.get("text").and_then(|v| v.as_str()))
            .ok_or_else(|| Error::EmptyResponse {
                backend_id: self.backend_id.clone(),
            })?;
        Ok(text.to_string())
    }
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ReplayResponseRecord {
    prompt_digest: String,
    text: String,
}

/// Serves responses from a fixture file keyed by prompt digest; errors on an
/// unknown digest.
pub struct ReplayGenerationBackend {
    by_digest: HashMap<String, String>,
}

impl ReplayGenerationBackend {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut by_digest = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayResponseRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(
                    format!("{} line {}", path.display(), idx + 1),
                    e.to_string(),
                )
            })?;
            by_digest.insert(record.prompt_digest, record.text);
        }
        Ok(ReplayGenerationBackend { by_digest })
    }

    /// Writes a fixture file usable by [`ReplayGenerationBackend::from_path`].
    pub fn write_fixture(path: &Path, entries: &[(String, String)]) -> Result<()> {
        let mut out = String::new();
        for (prompt_digest, text) in entries {
            let record = ReplayResponseRecord {
                prompt_digest: prompt_digest.clone(),
                text: text.clone(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl GenerationBackend for ReplayGenerationBackend {
    fn backend_id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &GenRequest<'_>, _params: &DecodeParams) -> Result<String> {
        let digest = sha256_hex(request.prompt.as_bytes());
        self.by_digest
            .get(&digest)
            .cloned()
            .ok_or_else(|| Error::Backend {
                message: format!("replay fixture has no response for prompt digest {digest}"),
                retryable: false,
                attempts: 1,
            })
    }
}

// ---------------------------------------------------------------------------
// echo-gold
// ---------------------------------------------------------------------------

/// Test-only backend that answers with the retrieved example's gold label.
/// With a corpus built so each query's nearest neighbor shares its gold
/// label, a full pipeline run must score a perfect F1.
pub struct EchoGoldBackend;

impl GenerationBackend for EchoGoldBackend {
    fn backend_id(&self) -> &str {
        "echo-gold"
    }

    fn complete(&self, request: &GenRequest<'_>, _params: &DecodeParams) -> Result<String> {
        request.example_gold.map(str::to_string).ok_or_else(|| {
            Error::validation("echo-gold backend requires retrieval metadata (rag variant only)")
        })
    }
}
