//! Types shared by the sparse and dense retrievers.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Position of a gold passage in a ranked list. Ranks start at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rank {
    Found(u32),
    NotFound,
}

impl Rank {
    pub fn position(self) -> Option<u32> {
        match self {
            Rank::Found(r) => Some(r),
            Rank::NotFound => None,
        }
    }

    /// `1/rank`, with a missing passage contributing nothing.
    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::Found(r) => 1.0 / f64::from(r),
            Rank::NotFound => 0.0,
        }
    }

    pub fn from_option(r: Option<u32>) -> Self {
        r.map_or(Rank::NotFound, Rank::Found)
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Found(r) => write!(f, "{r}"),
            Rank::NotFound => f.write_str("NOT_FOUND"),
        }
    }
}

// Serialized as a bare integer or `null`.
impl Serialize for Rank {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.position().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rank {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Rank::from_option(Option::<u32>::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub id: String,
    pub score: f64,
}

/// Top-`depth` passages, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<ScoredPassage>,
    pub depth: usize,
}

impl RetrievalResult {
    pub fn rank_of(&self, id: &str) -> Rank {
        Rank::from_option(
            self.ranked
                .iter()
                .position(|p| p.id == id)
                .map(|i| i as u32 + 1),
        )
    }

    /// Best rank among several gold ids.
    pub fn best_rank<S: AsRef<str>>(&self, ids: &[S]) -> Rank {
        self.ranked
            .iter()
            .position(|p| ids.iter().any(|g| g.as_ref() == p.id))
            .map_or(Rank::NotFound, |i| Rank::Found(i as u32 + 1))
    }
}

/// Sorts `(ordinal, score)` by descending score, ties by ascending ordinal,
/// and keeps the first `k`.
pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(k);
    scored
}

/// Default retrieval depth.
pub const DEFAULT_DEPTH: usize = 100;

/// The sparse and dense indices a query is scored against.
#[derive(Clone, Copy)]
pub struct Retrievers<'a> {
    pub sparse: Option<&'a crate::sparse::SparseIndex>,
    pub dense: Option<(&'a crate::dense::DenseIndex, &'a crate::dense::Embedder)>,
    pub depth: usize,
}

impl Retrievers<'_> {
    /// Best BM25 rank of any gold id, or `None` without a sparse index.
    pub fn sparse_rank<S: AsRef<str>>(&self, query: &str, gold: &[S]) -> Option<Rank> {
        self.sparse.map(|idx| idx.search(query, self.depth).best_rank(gold))
    }

    /// Best dense rank of any gold id. Empty queries fall back to the
    /// uniform vector.
    pub fn dense_rank<S: AsRef<str>>(&self, query: &str, gold: &[S]) -> crate::Result<Option<Rank>> {
        let Some((idx, embedder)) = self.dense else {
            return Ok(None);
        };
        let (v, _) = embedder.embed_or_fallback(query, crate::dense::Role::Query)?;
        Ok(Some(idx.search(&v, self.depth)?.best_rank(gold)))
    }
}
