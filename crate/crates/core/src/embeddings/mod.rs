//! Embedding vocabularies and exact nearest-neighbor lookup.
//!
//! An [`EmbeddingStore`] is an ordered vocabulary plus a dense row-major
//! `|V|×m` matrix of 64-bit embedding vectors. The mechanism's projection
//! step and the privacy statistics both assume the *exact* Euclidean argmin,
//! so the index here is a brute-force scan with precomputed squared norms
//! (distance via `‖q‖² - 2q·φ + ‖φ‖²`), chunk-parallel for large stores.
//! Ties are broken toward the smallest vocabulary id, which makes results
//! independent of evaluation order.

mod io;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_store, load_store_path};

/// Text formats for embedding files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    /// One record per line: `token v1 v2 ... vm`.
    GloveText,
    /// Same records preceded by a `|V| m` header line.
    Word2vecText,
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: expected {expected} dimensions, got {got}")]
    InconsistentDimension {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("header declares {declared} vectors but file contains {got}")]
    HeaderMismatch { declared: usize, got: usize },
    #[error("fewer than 2 words after parsing and filtering ({count})")]
    TooFewWords { count: usize },
    #[error("invalid store: {0}")]
    InvalidStore(String),
    #[error("query has dimension {got}, store has {expected}")]
    QueryDimension { expected: usize, got: usize },
    #[error("query has non-finite entries")]
    NonFiniteQuery,
}

/// Ordered vocabulary with one embedding row per word.
///
/// Immutable after construction; shared across workers behind an [`Arc`].
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    words: Vec<String>,
    ids: HashMap<String, usize>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingStore {
    /// Builds a store from parallel word and row-major value arrays.
    ///
    /// Requires at least two unique words, a positive dimension, and finite
    /// values throughout.
    pub fn new(words: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidStore(
                "dimension must be positive".into(),
            ));
        }
        if words.len() < 2 {
            return Err(EmbeddingError::TooFewWords { count: words.len() });
        }
        if data.len() != words.len() * dim {
            return Err(EmbeddingError::InvalidStore(format!(
                "{} words × {} dims needs {} values, got {}",
                words.len(),
                dim,
                words.len() * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::InvalidStore(
                "embedding values must be finite".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(EmbeddingError::InvalidStore(format!(
                    "duplicate word {w:?}"
                )));
            }
        }
        Ok(Self {
            words,
            ids,
            data,
            dim,
        })
    }

    /// Loads a store from an embedding file, optionally restricted to a
    /// vocabulary filter. See [`load_store_path`].
    pub fn load(
        path: &std::path::Path,
        format: EmbeddingFormat,
        vocab_filter: Option<&std::collections::HashSet<String>>,
    ) -> Result<Self, EmbeddingError> {
        load_store_path(path, format, vocab_filter)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Embedding row of vocabulary id `id`.
    pub fn vector(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Minimum `|V|·m` before single-query scans fan out across threads.
const PARALLEL_SCAN_MIN_WORK: usize = 1 << 22;

/// Rows per work unit in the parallel scan.
const SCAN_CHUNK: usize = 2048;

/// Exact Euclidean nearest-neighbor index over an [`EmbeddingStore`].
#[derive(Debug, Clone)]
pub struct NearestNeighborIndex {
    store: Arc<EmbeddingStore>,
    squared_norms: Vec<f64>,
}

impl NearestNeighborIndex {
    pub fn new(store: Arc<EmbeddingStore>) -> Self {
        let squared_norms = store.rows().map(|r| dot(r, r)).collect();
        Self {
            store,
            squared_norms,
        }
    }

    pub fn store(&self) -> &Arc<EmbeddingStore> {
        &self.store
    }

    pub fn squared_norms(&self) -> &[f64] {
        &self.squared_norms
    }

    /// Word minimizing Euclidean distance to `query`; ties go to the
    /// smallest vocabulary id. Returns `(word, id, distance)`.
    pub fn nearest_word(&self, query: &[f64]) -> Result<(&str, usize, f64), EmbeddingError> {
        if query.len() != self.store.dim() {
            return Err(EmbeddingError::QueryDimension {
                expected: self.store.dim(),
                got: query.len(),
            });
        }
        if !query.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFiniteQuery);
        }
        let (id, d2) = self.nearest_id(query);
        Ok((self.store.word(id), id, d2.max(0.0).sqrt()))
    }

    /// Hot-path scan without input validation; callers guarantee the query
    /// is finite and of the store's dimension.
    pub(crate) fn nearest_id(&self, query: &[f64]) -> (usize, f64) {
        debug_assert_eq!(query.len(), self.store.dim());
        if self.store.len() * self.store.dim() >= PARALLEL_SCAN_MIN_WORK {
            self.scan_parallel(query)
        } else {
            self.scan_sequential(query)
        }
    }

    fn scan_sequential(&self, query: &[f64]) -> (usize, f64) {
        let q2 = dot(query, query);
        scan_rows(
            &self.store,
            &self.squared_norms,
            query,
            q2,
            0,
            self.store.len(),
        )
    }

    fn scan_parallel(&self, query: &[f64]) -> (usize, f64) {
        let q2 = dot(query, query);
        let n = self.store.len();
        let chunks = n.div_ceil(SCAN_CHUNK);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c * SCAN_CHUNK;
                let end = (start + SCAN_CHUNK).min(n);
                scan_rows(&self.store, &self.squared_norms, query, q2, start, end)
            })
            .reduce(
                || (usize::MAX, f64::INFINITY),
                |a, b| {
                    if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            )
    }

    /// Recomputes every cached squared norm and returns the worst relative
    /// deviation; exercised by tests to guard against stale caches.
    pub fn norm_cache_deviation(&self) -> f64 {
        self.store
            .rows()
            .zip(&self.squared_norms)
            .map(|(row, &cached)| {
                let fresh = dot(row, row);
                (fresh - cached).abs() / fresh.max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

fn scan_rows(
    store: &EmbeddingStore,
    squared_norms: &[f64],
    query: &[f64],
    q2: f64,
    start: usize,
    end: usize,
) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (offset, &n2) in squared_norms[start..end].iter().enumerate() {
        let id = start + offset;
        let d2 = q2 - 2.0 * dot(query, store.vector(id)) + n2;
        if d2 < best.1 || (d2 == best.1 && id < best.0) {
            best = (id, d2);
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Vocabulary density summary over nearest-distinct-neighbor distances.
///
/// `mean_top50_sparse` averages the 50 largest distances (the sparse-region
/// words), `mean_top50_dense` the 50 smallest; for vocabularies under 50
/// words each side uses every word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub d_max: f64,
    pub d_min: f64,
    pub ratio_max_min: f64,
    pub mean_top50_sparse: f64,
    pub mean_top50_dense: f64,
    pub ratio_sparse_dense: f64,
}

/// Rows per block in the all-pairs distance computation.
const PROFILE_BLOCK: usize = 128;

/// Profiles the store's nearest-neighbor distance distribution.
pub fn corpus_profile(store: &EmbeddingStore) -> Result<CorpusProfile, EmbeddingError> {
    let n = store.len();
    if n < 2 {
        return Err(EmbeddingError::TooFewWords { count: n });
    }
    let m = store.dim();
    let x = DMatrix::from_fn(n, m, |i, j| store.vector(i)[j]);
    let xt = x.transpose();
    let norms: Vec<f64> = store.rows().map(|r| dot(r, r)).collect();

    let blocks = n.div_ceil(PROFILE_BLOCK);
    let mut nn_d2 = vec![0.0f64; n];
    let partials: Vec<(usize, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * PROFILE_BLOCK;
            let end = (start + PROFILE_BLOCK).min(n);
            let gram = x.rows(start, end - start) * &xt;
            let mut mins = Vec::with_capacity(end - start);
            for (local, i) in (start..end).enumerate() {
                let mut best = f64::INFINITY;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let d2 = norms[i] - 2.0 * gram[(local, j)] + norms[j];
                    if d2 < best {
                        best = d2;
                    }
                }
                mins.push(best.max(0.0));
            }
            (start, mins)
        })
        .collect();
    for (start, mins) in partials {
        nn_d2[start..start + mins.len()].copy_from_slice(&mins);
    }

    let mut dists: Vec<f64> = nn_d2.into_iter().map(f64::sqrt).collect();
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let k = n.min(50);
    let d_min = dists[0];
    let d_max = dists[n - 1];
    let mean_dense = dists[..k].iter().sum::<f64>() / k as f64;
    let mean_sparse = dists[n - k..].iter().sum::<f64>() / k as f64;
    Ok(CorpusProfile {
        d_max,
        d_min,
        ratio_max_min: d_max / d_min,
        mean_top50_sparse: mean_sparse,
        mean_top50_dense: mean_dense,
        ratio_sparse_dense: mean_sparse / mean_dense,
    })
}
