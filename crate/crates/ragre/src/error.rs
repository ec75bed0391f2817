//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {detail}")]
    Parse { context: String, detail: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("template error{}: {message}", offset.map(|o| format!(" at offset {o}")).unwrap_or_default())]
    Template {
        message: String,
        offset: Option<usize>,
    },

    #[error("backend error after {attempts} attempt(s): {message}")]
    Backend {
        message: String,
        retryable: bool,
        attempts: u32,
    },

    #[error("backend {backend_id} returned an empty response body")]
    EmptyResponse { backend_id: String },

    #[error("embedding db format error{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    DbFormat {
        message: String,
        offset: Option<u64>,
    },

    #[error("cache version mismatch (found {found}, expected {expected}); delete the cache file and rebuild")]
    CacheVersion { found: String, expected: u32 },

    #[error("prediction/gold id mismatch: {} missing, {} extra{}", missing.len(), extra.len(), preview(missing, extra))]
    IdMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("run interrupted after {committed} committed instance(s): {source}")]
    PartialRun {
        committed: usize,
        #[source]
        source: Box<Error>,
    },
}

fn preview(missing: &[String], extra: &[String]) -> String {
    let mut out = String::new();
    if let Some(id) = missing.first() {
        out.push_str(&format!(" (first missing: {id})"));
    }
    if let Some(id) = extra.first() {
        out.push_str(&format!(" (first extra: {id})"));
    }
    out
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn parse(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// True when retrying the same call may succeed (transport-level failures).
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::Backend {
                retryable: true,
                ..
            }
        )
    }

    /// Process exit code: 0 success, 2 validation/config, 3 backend, 4 interrupted run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Backend { .. } | Error::EmptyResponse { .. } => 3,
            Error::PartialRun { .. } => 4,
            _ => 2,
        }
    }
}
