//! BM25 over an in-memory inverted index.
//!
//! Scores follow the Lucene/pyserini shape:
//!
//! ```text
//! idf(t)    = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(q,d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·|d|/avgdl))
//! ```
//!
//! Repeated query terms contribute once per occurrence, as separate Lucene
//! clauses would.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageCollection};
use crate::error::{Error, Result};
use crate::retrieval::{top_k, Rank, RetrievalResult, ScoredPassage};
use crate::text::Analyzer;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Bm25Params {
    pub const QRECC: Self = Self { k1: 0.82, b: 0.68 };
    pub const TOPIOCQA: Self = Self { k1: 0.9, b: 0.4 };

    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "BM25 requires k1 >= 0 and 0 <= b <= 1, got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self::QRECC
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    version: u32,
    params: Bm25Params,
    analyzer: Analyzer,
    ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

/// One BM25 term contribution with all collection statistics fixed.
pub fn bm25_term_score(tf: f64, doc_len: f64, avgdl: f64, idf: f64, params: Bm25Params) -> f64 {
    let norm = 1.0 - params.b + params.b * doc_len / avgdl;
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

impl SparseIndex {
    pub fn build(passages: &PassageCollection, params: Bm25Params, analyzer: Analyzer) -> Result<Self> {
        Self::build_from(passages.as_slice(), params, analyzer)
    }

    pub fn build_from(passages: &[Passage], params: Bm25Params, analyzer: Analyzer) -> Result<Self> {
        params.validate()?;
        if passages.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        let mut ids = Vec::with_capacity(passages.len());
        for (ord, p) in passages.iter().enumerate() {
            let terms = analyzer.tokenize(&p.text);
            doc_lengths.push(terms.len() as u32);
            ids.push(p.id.clone());
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: ord as u32,
                    tf: count,
                });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = total as f64 / passages.len() as f64;
        Ok(Self {
            version: INDEX_FORMAT_VERSION,
            params,
            analyzer,
            ids,
            doc_lengths,
            avgdl,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.iter().any(|i| i == id)
    }

    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.len(), self.postings(term).len())
    }

    /// Top-`k` passages for `query`. Documents sharing no term with the query
    /// are never returned.
    pub fn search(&self, query: &str, k: usize) -> RetrievalResult {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let avgdl = self.avgdl.max(f64::MIN_POSITIVE);
        // Accumulate in query-term order so the float sums are reproducible.
        for term in self.analyzer.tokenize(query) {
            let plist = self.postings(&term);
            if plist.is_empty() {
                continue;
            }
            let idf = bm25_idf(self.len(), plist.len());
            for p in plist {
                let dl = f64::from(self.doc_lengths[p.doc as usize]);
                *acc.entry(p.doc).or_default() +=
                    bm25_term_score(f64::from(p.tf), dl, avgdl, idf, self.params);
            }
        }
        let scored = acc.into_iter().map(|(d, s)| (d as usize, s)).collect();
        RetrievalResult {
            ranked: top_k(scored, k)
                .into_iter()
                .map(|(ord, score)| ScoredPassage {
                    id: self.ids[ord].clone(),
                    score,
                })
                .collect(),
            depth: k,
        }
    }

    pub fn gold_rank(&self, query: &str, gold_id: &str, k: usize) -> Result<Rank> {
        if !self.contains(gold_id) {
            return Err(Error::UnknownId(gold_id.to_string()));
        }
        Ok(self.search(query, k).rank_of(gold_id))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path)?;
        let probe: serde_json::Value = serde_json::from_slice(&raw)?;
        let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != INDEX_FORMAT_VERSION {
            return Err(Error::Version {
                expected: INDEX_FORMAT_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(probe)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Passage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage {
                id: format!("d{}", i + 1),
                title: None,
                text: t.to_string(),
            })
            .collect()
    }

    fn index(texts: &[&str], params: Bm25Params) -> SparseIndex {
        SparseIndex::build_from(&docs(texts), params, Analyzer::default()).unwrap()
    }

    #[test]
    fn build_statistics() {
        let idx = index(&["a b", "a"], Bm25Params::default());
        assert_eq!(idx.len(), 2);
        assert!((idx.avgdl() - 1.5).abs() < 1e-12);
        assert_eq!(idx.postings("a").len(), 2);
        assert_eq!(idx.postings("b").len(), 1);
    }

    #[test]
    fn empty_collection_is_an_error() {
        assert!(matches!(
            SparseIndex::build_from(&[], Bm25Params::default(), Analyzer::default()),
            Err(Error::EmptyCollection)
        ));
    }

    #[test]
    fn rebuild_is_byte_identical_and_params_round_trip() {
        let texts = ["the cat sat", "a dog ran far", "cat and dog"];
        let a = serde_json::to_vec(&index(&texts, Bm25Params::QRECC)).unwrap();
        let b = serde_json::to_vec(&index(&texts, Bm25Params::QRECC)).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sparse.json");
        index(&texts, Bm25Params::QRECC).save(&path).unwrap();
        let back = SparseIndex::load(&path).unwrap();
        assert_eq!(back.params(), Bm25Params { k1: 0.82, b: 0.68 });
    }

    #[test]
    fn load_rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sparse.json");
        let mut v = serde_json::to_value(index(&["x"], Bm25Params::default())).unwrap();
        v["version"] = 99.into();
        fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        assert!(matches!(
            SparseIndex::load(&path),
            Err(Error::Version { expected: 1, found: 99 })
        ));
    }

    #[test]
    fn two_document_hand_evaluation() {
        // idf(b) = ln(1 + 1.5/1.5) = ln 2; norm(d1) = 0.6 + 0.4·2/1.5;
        // score = ln2 · 1.9 / (1 + 0.9·norm).
        let norm = 0.6 + 0.4 * 2.0 / 1.5;
        let expected = 2f64.ln() * 1.9 / (1.0 + 0.9 * norm);
        assert!((expected - 0.6519).abs() < 1e-4);

        let idx = index(&["a b", "a"], Bm25Params::TOPIOCQA);
        let res = idx.search("b", 10);
        assert_eq!(res.ranked.len(), 1);
        assert_eq!(res.ranked[0].id, "d1");
        assert!((res.ranked[0].score - expected).abs() < 1e-12);
        assert_eq!(idx.gold_rank("b", "d1", 10).unwrap(), Rank::Found(1));
    }

    #[test]
    fn unknown_terms_give_empty_results() {
        let idx = index(&["a b", "a"], Bm25Params::default());
        assert!(idx.search("zzz", 5).ranked.is_empty());
        assert!(idx.search("", 5).ranked.is_empty());
        assert_eq!(idx.gold_rank("zzz", "d1", 5).unwrap(), Rank::NotFound);
    }

    #[test]
    fn full_document_query_is_separable() {
        let idx = index(&["red green", "blue yellow", "black white"], Bm25Params::default());
        let res = idx.search("blue yellow", 1);
        assert_eq!(res.ranked.len(), 1);
        assert_eq!(res.ranked[0].id, "d2");
    }

    #[test]
    fn gold_rank_errors_and_cutoff() {
        let idx = index(&["a b", "a c", "a d"], Bm25Params::default());
        assert!(matches!(idx.gold_rank("a", "nope", 5), Err(Error::UnknownId(id)) if id == "nope"));
        // all tie on "a"; ordinal tie-break puts d3 third
        assert_eq!(idx.gold_rank("a", "d3", 2).unwrap(), Rank::NotFound);
        assert_eq!(idx.gold_rank("a", "d3", 3).unwrap(), Rank::Found(3));
    }

    proptest! {
        #[test]
        fn term_score_monotone_in_tf(tf in 0u32..50, dl in 1u32..100, avgdl in 1.0f64..50.0,
                                     k1 in 0.0f64..3.0, b in 0.0f64..=1.0) {
            let p = Bm25Params { k1, b };
            let idf = bm25_idf(10, 3);
            let lo = bm25_term_score(f64::from(tf), f64::from(dl), avgdl, idf, p);
            let hi = bm25_term_score(f64::from(tf + 1), f64::from(dl), avgdl, idf, p);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn gold_rank_matches_search_position(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vocab = ["a", "b", "c", "d", "e", "f"];
            let texts: Vec<String> = (0..12)
                .map(|_| (0..rng.random_range(1..6)).map(|_| vocab[rng.random_range(0..6)]).collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let idx = index(&refs, Bm25Params::default());
            let res = idx.search("a c", 5);
            for (i, hit) in res.ranked.iter().enumerate() {
                prop_assert_eq!(idx.gold_rank("a c", &hit.id, 5).unwrap(), Rank::Found(i as u32 + 1));
            }
        }
    }
}
