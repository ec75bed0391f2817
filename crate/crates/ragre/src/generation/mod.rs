//! Prompt dispatch to language-model backends under a zero-shot regime, with
//! response caching, bounded retries, and an optional per-minute request
//! budget.

mod backend;
mod cache;

pub use backend::{
    EchoGoldBackend, GenRequest, GenerationBackend, HttpChatBackend, HttpChatConfig,
    ReplayGenerationBackend,
};
pub use cache::{open_cache, CacheKey, CachedResponse, ResponseCache};

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::embedstore::retry_with_backoff;
use crate::error::Result;
use crate::promptgen::PromptBundle;

/// Decoding parameters. Greedy decoding (temperature 0) and a short output
/// budget by default: the longest valid label string fits well inside 32
/// tokens, and a tight budget cuts off runaway generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

fn default_max_new_tokens() -> u32 {
    32
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            temperature: 0.0,
            max_new_tokens: 32,
            stop_sequences: Vec::new(),
        }
    }
}

impl DecodeParams {
    /// Digest over the canonical serialized form; part of the cache key.
    pub fn digest(&self) -> String {
        let serialized = serde_json::to_string(self).expect("params serialize");
        sha256_hex(serialized.as_bytes())
    }
}

/// The backend's output, verbatim and untrimmed, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub query_id: String,
    pub text: String,
    pub backend_id: String,
    /// Digest of the exact prompt bytes sent.
    pub prompt_digest: String,
    pub latency_ms: u64,
    pub from_cache: bool,
}

/// Retry policy for transport-level failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

struct RateState {
    window_start: Instant,
    used: u32,
}

/// A backend plus decode params, retry policy, optional response cache, and
/// an optional requests-per-minute budget. Shareable across worker threads.
pub struct Generator {
    backend: Arc<dyn GenerationBackend>,
    params: DecodeParams,
    retry: RetryPolicy,
    cache: Option<ResponseCache>,
    rate: Option<(u32, Mutex<RateState>)>,
}

impl Generator {
    pub fn new(backend: Arc<dyn GenerationBackend>, params: DecodeParams) -> Self {
        Generator {
            backend,
            params,
            retry: RetryPolicy::default(),
            cache: None,
            rate: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        if requests_per_minute > 0 {
            self.rate = Some((
                requests_per_minute,
                Mutex::new(RateState {
                    window_start: Instant::now(),
                    used: 0,
                }),
            ));
        }
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.backend_id()
    }

    pub fn params(&self) -> &DecodeParams {
        &self.params
    }

    fn acquire_rate_slot(&self) {
        let Some((budget, state)) = &self.rate else {
            return;
        };
        loop {
            {
                let mut state = state.lock().unwrap();
                if state.window_start.elapsed() >= Duration::from_secs(60) {
                    state.window_start = Instant::now();
                    state.used = 0;
                }
                if state.used < *budget {
                    state.used += 1;
                    return;
                }
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    /// Sends a rendered prompt and returns the backend's text verbatim.
    ///
    /// Cache hits never touch the backend (at-most-once per cache key);
    /// transport failures are retried with exponential backoff, and the final
    /// error carries the attempt count.
    pub fn generate(
        &self,
        bundle: &PromptBundle,
        example_gold: Option<&str>,
    ) -> Result<RawResponse> {
        let prompt_digest = bundle.prompt_digest();
        let key = CacheKey {
            backend_id: self.backend.backend_id().to_string(),
            params_digest: self.params.digest(),
            prompt_digest: prompt_digest.clone(),
        };

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lookup(&key) {
                return Ok(RawResponse {
                    query_id: bundle.query_id.clone(),
                    text: hit.text,
                    backend_id: key.backend_id,
                    prompt_digest,
                    latency_ms: hit.latency_ms,
                    from_cache: true,
                });
            }
        }

        self.acquire_rate_slot();
        let request = GenRequest {
            prompt: &bundle.text,
            example_gold,
        };
        let started = Instant::now();
        let text = retry_with_backoff(self.retry.max_attempts, self.retry.backoff_ms, || {
            self.backend.complete(&request, &self.params)
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;

        if let Some(cache) = &self.cache {
            cache.insert(&key, &text, latency_ms)?;
        }
        Ok(RawResponse {
            query_id: bundle.query_id.clone(),
            text,
            backend_id: key.backend_id,
            prompt_digest,
            latency_ms,
            from_cache: false,
        })
    }
}
