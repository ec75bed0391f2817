//! Retrieval-augmented relation extraction.
//!
//! Given a sentence and a head/tail entity pair, the pipeline retrieves the
//! most similar training sentence from an embedding store, renders an
//! augmented prompt (or a plain baseline prompt), obtains a relation label
//! from a language-model backend, refines the raw response into a valid
//! inventory label, and scores whole runs against gold labels with micro
//! precision/recall/F1.
//!
//! Modules follow the pipeline stages:
//!
//! - [`corpus`] — dataset loading and normalization
//! - [`embedstore`] — embedding db build, persistence, exact cosine search
//! - [`promptgen`] — prompt templates and rendering
//! - [`generation`] — language-model backends, caching, retries
//! - [`refine`] — response post-processing into inventory labels
//! - [`evalkit`] — scoring and report emission
//! - [`pipeline`] — config, orchestration, and the CLI commands

pub mod corpus;
pub mod digest;
pub mod embedstore;
mod error;
pub mod evalkit;
pub mod generation;
pub(crate) mod par;
pub mod pipeline;
pub mod promptgen;
pub mod refine;

pub use error::{Error, Result};
