//! Exact cosine-similarity search over the embedding store.
//!
//! The scan over entries is the data-parallel hot loop: with the `parallel`
//! feature it runs on rayon above a size threshold, and [`top_k_seq`] keeps
//! the sequential path callable for comparison. Both paths compute identical
//! per-entry scores and use the same deterministic selection, so results are
//! bit-equal.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EmbeddingDB, EmbeddingVector, RetrievalHit};
use crate::error::{Error, Result};

/// Below this entry count the dispatching path stays sequential; rayon
/// overhead dominates on small stores.
const PAR_MIN_ENTRIES: usize = 4096;

/// Cosine similarity, accumulated in f64. Errors on dimension mismatch or a
/// zero-norm input.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "cosine dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (dot, norm_a, norm_b) = dot_and_norms(a.values(), b.values());
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::validation(
            "cosine of a zero-norm vector is undefined",
        ));
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut norm_a = 0.0f64;
    let mut norm_b = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    (dot, norm_a, norm_b)
}

/// Score of one validated entry against a validated query; cannot fail.
fn entry_score(query: &EmbeddingVector, entry: &EmbeddingVector) -> f64 {
    let (dot, norm_q, norm_e) = dot_and_norms(query.values(), entry.values());
    dot / (norm_q.sqrt() * norm_e.sqrt())
}

/// Candidate ordered so that "greater" means "worse": lower score first,
/// then higher entry index. A max-heap of these keeps the current worst on
/// top and realizes the score-descending / index-ascending tie-break.
#[derive(Debug, PartialEq)]
struct Candidate {
    score: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

fn select_top_k(scores: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (idx, score) in scores {
        let candidate = Candidate { score, idx };
        if heap.len() < k {
            heap.push(candidate);
        } else if let Some(worst) = heap.peek() {
            if candidate < *worst {
                heap.pop();
                heap.push(candidate);
            }
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|c| (c.idx, c.score))
        .collect()
}

fn check_query(db: &EmbeddingDB, query: &EmbeddingVector, k: usize) -> Result<()> {
    if db.is_empty() {
        return Err(Error::validation("embedding db is empty"));
    }
    if query.dim() != db.dim() {
        return Err(Error::validation(format!(
            "query dim {} does not match db dim {}",
            query.dim(),
            db.dim()
        )));
    }
    if k == 0 || k > db.len() {
        return Err(Error::validation(format!(
            "k = {k} out of range for {} entries",
            db.len()
        )));
    }
    Ok(())
}

fn hits_from(db: &EmbeddingDB, selected: Vec<(usize, f64)>) -> Vec<RetrievalHit> {
    selected
        .into_iter()
        .enumerate()
        .map(|(rank, (idx, score))| RetrievalHit {
            instance_id: db.entries()[idx].instance_id.clone(),
            score,
            rank: rank + 1,
        })
        .collect()
}

/// Exact top-k by cosine similarity. With the `parallel` feature the score
/// scan runs on rayon for stores above [`PAR_MIN_ENTRIES`].
pub fn top_k(db: &EmbeddingDB, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>> {
    check_query(db, query, k)?;

    #[cfg(feature = "parallel")]
    if db.len() >= PAR_MIN_ENTRIES {
        use rayon::prelude::*;
        let scores: Vec<f64> = db
            .entries()
            .par_iter()
            .map(|e| entry_score(query, &e.vector))
            .collect();
        return Ok(hits_from(
            db,
            select_top_k(scores.into_iter().enumerate(), k),
        ));
    }

    top_k_seq(db, query, k)
}

/// Sequential scan, always available; the fallback used when the `parallel`
/// feature is off and the reference path the benchmarks compare against.
pub fn top_k_seq(db: &EmbeddingDB, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>> {
    check_query(db, query, k)?;
    let scores = db
        .entries()
        .iter()
        .enumerate()
        .map(|(idx, e)| (idx, entry_score(query, &e.vector)));
    Ok(hits_from(db, select_top_k(scores, k)))
}

/// Entry filter applied before selection when querying from the pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchFilter<'a> {
    /// Skip the entry with this id (self-retrieval exclusion).
    pub exclude_id: Option<&'a str>,
    /// Skip entries whose gold label equals `negative_label`.
    pub exclude_negative: bool,
    pub negative_label: Option<&'a str>,
}

impl SearchFilter<'_> {
    fn admits(&self, entry: &super::DbEntry) -> bool {
        if let Some(id) = self.exclude_id {
            if entry.instance_id == id {
                return false;
            }
        }
        if self.exclude_negative {
            if let Some(neg) = self.negative_label {
                if entry.gold_label == neg {
                    return false;
                }
            }
        }
        true
    }
}

/// Exact top-k over the entries admitted by `filter`. Returns fewer than `k`
/// hits when the filter leaves fewer candidates; ranks stay consecutive.
pub fn top_k_filtered(
    db: &EmbeddingDB,
    query: &EmbeddingVector,
    k: usize,
    filter: SearchFilter<'_>,
) -> Result<Vec<RetrievalHit>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    check_query(db, query, 1)?;

    #[cfg(feature = "parallel")]
    if db.len() >= PAR_MIN_ENTRIES {
        use rayon::prelude::*;
        let scores: Vec<Option<f64>> = db
            .entries()
            .par_iter()
            .map(|e| filter.admits(e).then(|| entry_score(query, &e.vector)))
            .collect();
        let admitted = scores
            .into_iter()
            .enumerate()
            .filter_map(|(idx, s)| s.map(|s| (idx, s)));
        return Ok(hits_from(db, select_top_k(admitted, k)));
    }

    let admitted = db
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| filter.admits(e))
        .map(|(idx, e)| (idx, entry_score(query, &e.vector)));
    Ok(hits_from(db, select_top_k(admitted, k)))
}
