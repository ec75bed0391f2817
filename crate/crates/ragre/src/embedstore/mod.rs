//! The embedding store: one vector per training sentence, produced by a
//! pluggable backend, persisted in a checksummed binary file, and searched by
//! exact cosine similarity (no approximate indexing — exactness keeps
//! retrieval testable against a brute-force oracle).

mod backend;
mod file;
mod search;

pub(crate) use backend::retry_with_backoff;
pub use backend::{
    write_replay_embedding_fixture, CachedEmbeddingBackend, EmbeddingBackend, HttpEmbeddingBackend,
    HttpEmbeddingConfig, ReplayEmbeddingBackend,
};
pub use file::{db_file_checksum, load_db, save_db};
pub use search::{cosine, top_k, top_k_filtered, top_k_seq, SearchFilter};

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};

/// A fixed-length embedding. Values are stored as 32-bit floats; similarity
/// arithmetic accumulates in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Rejects empty, non-finite, and all-zero vectors (an all-zero vector
    /// has undefined cosine similarity).
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("embedding vector is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding vector has a non-finite value"));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("embedding vector is all-zero"));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// One stored training sentence: id, text, vector, and gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub instance_id: String,
    pub surface_text: String,
    pub vector: EmbeddingVector,
    pub gold_label: String,
}

/// Immutable store of training-sentence embeddings, ordered by corpus load
/// order. Safe to share across concurrent queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDB {
    pub model_id: String,
    dim: usize,
    pub inventory_digest: String,
    entries: Vec<DbEntry>,
}

impl EmbeddingDB {
    /// Validates entry dimensions and id uniqueness.
    pub fn from_entries(
        model_id: impl Into<String>,
        dim: usize,
        inventory_digest: impl Into<String>,
        entries: Vec<DbEntry>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        let mut ids = HashSet::new();
        for entry in &entries {
            if entry.vector.dim() != dim {
                return Err(Error::validation(format!(
                    "entry {}: vector dim {} does not match db dim {dim}",
                    entry.instance_id,
                    entry.vector.dim()
                )));
            }
            if !ids.insert(entry.instance_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate instance id '{}' in embedding db",
                    entry.instance_id
                )));
            }
        }
        Ok(EmbeddingDB {
            model_id: model_id.into(),
            dim,
            inventory_digest: inventory_digest.into(),
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[DbEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_by_id(&self, id: &str) -> Option<&DbEntry> {
        self.entries.iter().find(|e| e.instance_id == id)
    }

    /// Set of stored instance ids (used by self-retrieval exclusion).
    pub fn id_set(&self) -> HashSet<&str> {
        self.entries
            .iter()
            .map(|e| e.instance_id.as_str())
            .collect()
    }
}

/// One retrieval result. Hits for a query are sorted by score descending,
/// ties broken by ascending entry index; `rank` is 1-based and consecutive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetrievalHit {
    pub instance_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Embeds a batch of texts, enforcing order preservation and a uniform
/// dimension across the batch.
pub fn embed_texts(
    texts: &[String],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::validation("cannot embed an empty batch"));
    }
    if let Some(pos) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::validation(format!(
            "cannot embed an empty string (batch position {pos})"
        )));
    }
    let vectors = backend.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::Backend {
            message: format!(
                "backend returned {} vector(s) for {} text(s)",
                vectors.len(),
                texts.len()
            ),
            retryable: false,
            attempts: 1,
        });
    }
    let expected = backend.dim();
    for (idx, vector) in vectors.iter().enumerate() {
        if vector.dim() != expected {
            return Err(Error::validation(format!(
                "batch position {idx}: vector dim {} does not match backend dim {expected}",
                vector.dim()
            )));
        }
    }
    Ok(vectors)
}

/// Options for [`build_db_with`]. `in_flight` bounds how many embedding
/// batches are outstanding at once; entries land by index, never by arrival.
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub batch_size: usize,
    pub in_flight: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            batch_size: 32,
            in_flight: 4,
        }
    }
}

/// Builds an embedding db from a training corpus (default in-flight window).
pub fn build_db(
    corpus: &Corpus,
    backend: &dyn EmbeddingBackend,
    batch_size: usize,
) -> Result<EmbeddingDB> {
    build_db_with(
        corpus,
        backend,
        BuildOptions {
            batch_size,
            ..BuildOptions::default()
        },
    )
}

/// Builds an embedding db, dispatching up to `in_flight` batches concurrently.
///
/// Rebuilding from the same corpus and a replay backend yields a
/// byte-identical db file; entry order is the corpus load order regardless of
/// batch completion order.
pub fn build_db_with(
    corpus: &Corpus,
    backend: &dyn EmbeddingBackend,
    opts: BuildOptions,
) -> Result<EmbeddingDB> {
    if corpus.split != Split::Train {
        return Err(Error::validation(
            "embedding db must be built from the train split",
        ));
    }
    if opts.batch_size == 0 {
        return Err(Error::validation("batch_size must be at least 1"));
    }
    corpus.validate()?;

    let mut texts = Vec::with_capacity(corpus.len());
    for instance in &corpus.instances {
        let label = instance.gold_label.as_ref().ok_or_else(|| {
            Error::validation(format!(
                "instance {}: training instance has no gold label",
                instance.id
            ))
        })?;
        texts.push((
            instance.id.clone(),
            instance.surface_text.clone(),
            label.clone(),
        ));
    }

    let batches: Vec<&[(String, String, String)]> = texts.chunks(opts.batch_size).collect();
    let slots: Mutex<Vec<Option<Vec<EmbeddingVector>>>> = Mutex::new(vec![None; batches.len()]);
    let next_batch = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);

    let workers = opts.in_flight.max(1).min(batches.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let idx = next_batch.fetch_add(1, Ordering::SeqCst);
                if idx >= batches.len() {
                    return;
                }
                let batch = batches[idx];
                let batch_texts: Vec<String> = batch.iter().map(|(_, t, _)| t.clone()).collect();
                match embed_texts(&batch_texts, backend) {
                    Ok(vectors) => {
                        slots.lock().unwrap()[idx] = Some(vectors);
                    }
                    Err(err) => {
                        abort.store(true, Ordering::SeqCst);
                        let first = batch.first().map(|(id, _, _)| id.as_str()).unwrap_or("?");
                        let last = batch.last().map(|(id, _, _)| id.as_str()).unwrap_or("?");
                        let wrapped = Error::Backend {
                            message: format!(
                                "embedding batch {idx} (instances {first}..{last}) failed: {err}"
                            ),
                            retryable: err.is_retryable(),
                            attempts: 1,
                        };
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(wrapped);
                        }
                    }
                }
            });
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }

    let slots = slots.into_inner().unwrap();
    let mut entries = Vec::with_capacity(texts.len());
    for (batch, vectors) in batches.iter().zip(slots) {
        let vectors = vectors.expect("all batches completed");
        for ((id, text, label), vector) in batch.iter().zip(vectors) {
            entries.push(DbEntry {
                instance_id: id.clone(),
                surface_text: text.clone(),
                vector,
                gold_label: label.clone(),
            });
        }
    }
    EmbeddingDB::from_entries(
        backend.model_id(),
        backend.dim(),
        corpus.inventory.digest(),
        entries,
    )
}
