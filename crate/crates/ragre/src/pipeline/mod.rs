//! Run configuration and the pipeline commands (index, run, score, compare).
//!
//! One declarative JSON config drives everything. The config is snapshotted
//! into the output directory and its digest is stamped into every artifact
//! file, so a rerun with identical config and replay/cached backends
//! reproduces identical artifact digests.

mod run;

pub use run::{cmd_compare, cmd_index, cmd_run, cmd_score, IndexSummary, RunSummary, ScoreArgs};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    builtin_inventory, load_semeval, load_tacred, Corpus, DatasetKind, LabelInventory, Split,
};
use crate::embedstore::{
    CachedEmbeddingBackend, EmbeddingBackend, HttpEmbeddingBackend, HttpEmbeddingConfig,
    ReplayEmbeddingBackend,
};
use crate::error::{Error, Result};
use crate::evalkit::ScoringMode;
use crate::generation::{
    DecodeParams, EchoGoldBackend, GenerationBackend, HttpChatBackend, HttpChatConfig,
    ReplayGenerationBackend, RetryPolicy,
};

/// Which prompt variants a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunVariant {
    Simple,
    Rag,
    Both,
}

impl std::str::FromStr for RunVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(RunVariant::Simple),
            "rag" => Ok(RunVariant::Rag),
            "both" => Ok(RunVariant::Both),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Input file shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    #[serde(rename = "tacred-json")]
    TacredJson,
    #[serde(rename = "semeval-txt")]
    SemevalTxt,
    #[serde(rename = "jsonl")]
    Jsonl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Defaults to the kind's native format: semeval-txt for semeval,
    /// tacred-json otherwise.
    #[serde(default)]
    pub format: Option<CorpusFormat>,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    /// Required for custom kind; overrides the builtin inventory otherwise.
    #[serde(default)]
    pub inventory_path: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn inventory(&self) -> Result<LabelInventory> {
        match &self.inventory_path {
            Some(path) => LabelInventory::from_path(path),
            None => builtin_inventory(self.kind),
        }
    }

    fn effective_format(&self) -> CorpusFormat {
        self.format.unwrap_or(match self.kind {
            DatasetKind::Semeval => CorpusFormat::SemevalTxt,
            _ => CorpusFormat::TacredJson,
        })
    }

    pub fn load_corpus(&self, path: &Path, split: Split) -> Result<Corpus> {
        let inventory = self.inventory()?;
        match self.effective_format() {
            CorpusFormat::TacredJson => load_tacred(path, inventory, split),
            CorpusFormat::SemevalTxt => load_semeval(path, inventory, split),
            CorpusFormat::Jsonl => Corpus::read_jsonl(path, inventory, split),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EmbeddingBackendConfig {
    #[serde(rename = "http")]
    Http(HttpEmbeddingConfig),
    #[serde(rename = "replay")]
    Replay { fixture_path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackendConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    /// Skip training entries holding the negative label during retrieval.
    #[serde(default)]
    pub exclude_negative_examples: bool,
}

fn default_batch_size() -> usize {
    32
}

fn default_in_flight() -> usize {
    4
}

impl EmbeddingConfig {
    /// Builds the backend, wrapped in the on-disk embedding cache when a
    /// cache path is configured.
    pub fn build_backend(&self) -> Result<Box<dyn EmbeddingBackend>> {
        let inner: Box<dyn EmbeddingBackend> = match &self.backend {
            EmbeddingBackendConfig::Http(config) => {
                Box::new(HttpEmbeddingBackend::new(config.clone())?)
            }
            EmbeddingBackendConfig::Replay { fixture_path } => {
                Box::new(ReplayEmbeddingBackend::from_path(fixture_path)?)
            }
        };
        match &self.cache_path {
            Some(path) => Ok(Box::new(CachedEmbeddingBackend::open(inner, path)?)),
            None => Ok(inner),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum GenerationBackendConfig {
    #[serde(rename = "http-chat")]
    HttpChat(HttpChatConfig),
    #[serde(rename = "replay")]
    Replay { fixture_path: PathBuf },
    #[serde(rename = "echo-gold")]
    EchoGold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub backend: GenerationBackendConfig,
    #[serde(default)]
    pub params: DecodeParams,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_path: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

impl GenerationConfig {
    pub fn build_backend(&self) -> Result<std::sync::Arc<dyn GenerationBackend>> {
        Ok(match &self.backend {
            GenerationBackendConfig::HttpChat(config) => {
                std::sync::Arc::new(HttpChatBackend::new(config.clone())?)
            }
            GenerationBackendConfig::Replay { fixture_path } => {
                std::sync::Arc::new(ReplayGenerationBackend::from_path(fixture_path)?)
            }
            GenerationBackendConfig::EchoGold => std::sync::Arc::new(EchoGoldBackend),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateConfig {
    #[serde(default = "default_simple_template")]
    pub simple: String,
    #[serde(default = "default_rag_template")]
    pub rag: String,
}

fn default_simple_template() -> String {
    crate::promptgen::DEFAULT_SIMPLE_TEMPLATE_ID.to_string()
}

fn default_rag_template() -> String {
    crate::promptgen::DEFAULT_RAG_TEMPLATE_ID.to_string()
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            simple: default_simple_template(),
            rag: default_rag_template(),
        }
    }
}

fn default_k() -> usize {
    1
}

fn default_scoring_mode() -> ScoringMode {
    ScoringMode::PositiveMicro
}

/// The single declarative run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub embedding: Option<EmbeddingConfig>,
    pub generation: GenerationConfig,
    #[serde(default)]
    pub templates: TemplateConfig,
    pub variant: RunVariant,
    #[serde(default = "default_k")]
    pub k: usize,
    /// `None` means automatic: exclude the query's own id exactly when it
    /// exists in the db (relevant for synthetic and diagnostic runs).
    #[serde(default)]
    pub exclude_self_retrieval: Option<bool>,
    #[serde(default = "default_scoring_mode")]
    pub scoring_mode: ScoringMode,
    #[serde(default)]
    pub refine_rules_path: Option<PathBuf>,
    #[serde(default)]
    pub db_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.dataset.kind == DatasetKind::Custom && self.dataset.inventory_path.is_none() {
            return Err(Error::config(
                "custom dataset kind requires an inventory_path",
            ));
        }
        if matches!(self.variant, RunVariant::Rag | RunVariant::Both) {
            if self.db_path.is_none() {
                return Err(Error::config(
                    "rag variant requires db_path (build it with the index command)",
                ));
            }
            if self.embedding.is_none() {
                return Err(Error::config("rag variant requires an embedding backend"));
            }
            if self.dataset.train_path.is_none() {
                return Err(Error::config(
                    "rag variant requires dataset.train_path (retrieved examples are resolved there)",
                ));
            }
        }
        Ok(())
    }

    /// Canonical snapshot bytes; their digest stamps every artifact.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config_json(dir: &Path) -> String {
        format!(
            r#"{{
  "dataset": {{"kind": "tacred", "test_path": "test.json"}},
  "generation": {{"backend": {{"kind": "echo-gold"}}}},
  "variant": "simple",
  "output_dir": "{}"
}}"#,
            dir.display()
        )
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, minimal_config_json(dir.path())).unwrap();
        let config = RunConfig::from_path(&path).unwrap();
        assert_eq!(config.k, 1);
        assert_eq!(config.scoring_mode, ScoringMode::PositiveMicro);
        assert_eq!(config.generation.in_flight, 4);
        assert_eq!(config.generation.params, DecodeParams::default());
        assert_eq!(config.templates.simple, "default-simple");
        assert!(config.exclude_self_retrieval.is_none());
    }

    #[test]
    fn rag_variant_requires_db_and_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let json = minimal_config_json(dir.path()).replace("\"simple\"", "\"rag\"");
        let path = dir.path().join("config.json");
        fs::write(&path, json).unwrap();
        let err = RunConfig::from_path(&path).unwrap_err();
        assert!(err.to_string().contains("db_path"), "{err}");
    }

    #[test]
    fn snapshot_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, minimal_config_json(dir.path())).unwrap();
        let config = RunConfig::from_path(&path).unwrap();
        assert_eq!(config.snapshot_bytes(), config.snapshot_bytes());
    }

    #[test]
    fn backend_config_round_trips_through_tagged_json() {
        let json = r#"{"kind": "replay", "fixture_path": "fix.jsonl"}"#;
        let config: GenerationBackendConfig = serde_json::from_str(json).unwrap();
        assert!(matches!(config, GenerationBackendConfig::Replay { .. }));
        let echo: GenerationBackendConfig =
            serde_json::from_str(r#"{"kind": "echo-gold"}"#).unwrap();
        assert!(matches!(echo, GenerationBackendConfig::EchoGold));
    }
}
