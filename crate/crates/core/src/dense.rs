//! Frozen embedders and exact cosine search.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageCollection};
use crate::error::{Error, Result};
use crate::model::SeqModel;
use crate::retrieval::{top_k, Rank, RetrievalResult, ScoredPassage};
use crate::text::{fnv1a64, Analyzer};

pub const QUERY_TOKEN_BUDGET: usize = 128;
pub const PASSAGE_TOKEN_BUDGET: usize = 384;
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed;

/// Which side of retrieval a text is on; selects the truncation budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Passage,
}

impl Role {
    pub fn budget(self) -> usize {
        match self {
            Role::Query => QUERY_TOKEN_BUDGET,
            Role::Passage => PASSAGE_TOKEN_BUDGET,
        }
    }
}

/// Signed feature hashing of tf-idf weights followed by L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedTfIdf {
    pub dim: usize,
    pub seed: u64,
    pub analyzer: Analyzer,
    /// Smoothed idf, `ln((1+N)/(1+df)) + 1`, for every term of the fitting corpus.
    pub idf: BTreeMap<String, f64>,
    pub n_docs: usize,
}

impl HashedTfIdf {
    pub fn fit(passages: &[Passage], dim: usize, seed: u64, analyzer: Analyzer) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("embedding dim must be >= 2, got {dim}")));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for p in passages {
            let mut terms = analyzer.tokenize(&p.text);
            terms.truncate(PASSAGE_TOKEN_BUDGET);
            terms.sort();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = passages.len();
        let idf = df
            .into_iter()
            .map(|(t, d)| (t, smooth_idf(n, d)))
            .collect();
        Ok(Self {
            dim,
            seed,
            analyzer,
            idf,
            n_docs: n,
        })
    }

    pub fn term_idf(&self, term: &str) -> f64 {
        self.idf
            .get(term)
            .copied()
            .unwrap_or_else(|| smooth_idf(self.n_docs, 0))
    }

    /// Bucket and sign of one term.
    pub fn slot(&self, term: &str) -> (usize, f64) {
        let h = fnv1a64(self.seed, term.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    fn raw(&self, text: &str, budget: usize) -> Vec<f64> {
        let mut terms = self.analyzer.tokenize(text);
        terms.truncate(budget);
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &terms {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        let mut v = vec![0.0; self.dim];
        for (term, count) in tf {
            let (slot, sign) = self.slot(term);
            v[slot] += sign * count as f64 * self.term_idf(term);
        }
        v
    }
}

fn smooth_idf(n: usize, df: usize) -> f64 {
    ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Mean-pooled encoder states of a frozen reformulation model.
#[derive(Debug, Clone)]
pub struct LearnedEncoder {
    pub model: Arc<SeqModel>,
}

/// Precomputed vectors keyed by passage id or by exact query text.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub rows: HashMap<String, Vec<f32>>,
}

impl ExternalEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let (dim, rows) = read_embedding_file(path)?;
        Ok(Self {
            dim,
            rows: rows.into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum Embedder {
    HashedTfIdf(HashedTfIdf),
    LearnedEncoder(LearnedEncoder),
    ExternalFile(ExternalEmbeddings),
}

impl Embedder {
    pub fn kind(&self) -> &'static str {
        match self {
            Embedder::HashedTfIdf(_) => "hashed_tfidf",
            Embedder::LearnedEncoder(_) => "learned_encoder",
            Embedder::ExternalFile(_) => "external_file",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::HashedTfIdf(h) => h.dim,
            Embedder::LearnedEncoder(l) => l.model.arch().d_model,
            Embedder::ExternalFile(e) => e.dim,
        }
    }

    /// Unit-length embedding of `text`. Text without any content is an error.
    pub fn embed(&self, text: &str, role: Role) -> Result<Vec<f32>> {
        let raw: Vec<f64> = match self {
            Embedder::HashedTfIdf(h) => h.raw(text, role.budget()),
            Embedder::LearnedEncoder(l) => l.model.mean_encoding(text, role.budget())?,
            Embedder::ExternalFile(e) => e
                .rows
                .get(text)
                .ok_or_else(|| Error::UnknownId(text.to_string()))?
                .iter()
                .map(|&x| f64::from(x))
                .collect(),
        };
        normalize(&raw).ok_or(Error::EmptyText)
    }

    /// Like [`embed`](Self::embed) but substitutes the uniform unit vector for
    /// empty text. The flag reports whether the fallback was used.
    pub fn embed_or_fallback(&self, text: &str, role: Role) -> Result<(Vec<f32>, bool)> {
        match self.embed(text, role) {
            Ok(v) => Ok((v, false)),
            Err(Error::EmptyText) => {
                let x = (1.0 / self.dim() as f64).sqrt() as f32;
                Ok((vec![x; self.dim()], true))
            }
            Err(e) => Err(e),
        }
    }
}

fn normalize(v: &[f64]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (x / norm) as f32).collect())
}

/// Dot product in f64 over f32 storage.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
}

impl DenseIndex {
    pub fn build(passages: &PassageCollection, embedder: &Embedder) -> Result<Self> {
        let mut idx = Self::with_dim(embedder.dim());
        for p in passages.iter() {
            let v = match embedder {
                Embedder::ExternalFile(e) => e.rows.get(&p.id).cloned().ok_or_else(|| Error::UnknownId(p.id.clone()))?,
                _ => embedder.embed(&p.text, Role::Passage)?,
            };
            idx.push(p.id.clone(), &v)?;
        }
        Ok(idx)
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
        }
    }

    /// Appends a vector, normalizing it to unit length.
    pub fn push(&mut self, id: String, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        let raw: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let unit = normalize(&raw).ok_or(Error::EmptyText)?;
        self.ids.push(id);
        self.vectors.extend_from_slice(&unit);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, ord: usize) -> &[f32] {
        &self.vectors[ord * self.dim..(ord + 1) * self.dim]
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<RetrievalResult> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let scored = (0..self.len()).map(|i| (i, dot(self.vector(i), query))).collect();
        Ok(RetrievalResult {
            ranked: top_k(scored, k)
                .into_iter()
                .map(|(ord, score)| ScoredPassage {
                    id: self.ids[ord].clone(),
                    score,
                })
                .collect(),
            depth: k,
        })
    }

    pub fn gold_rank(&self, query: &[f32], gold_id: &str, k: usize) -> Result<Rank> {
        if !self.ids.iter().any(|i| i == gold_id) {
            return Err(Error::UnknownId(gold_id.to_string()));
        }
        Ok(self.search(query, k)?.rank_of(gold_id))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<(&str, &[f32])> = (0..self.len()).map(|i| (self.ids[i].as_str(), self.vector(i))).collect();
        write_embedding_file(path, self.dim, &rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (dim, rows) = read_embedding_file(path)?;
        let mut idx = Self::with_dim(dim);
        for (id, v) in rows {
            idx.push(id, &v)?;
        }
        Ok(idx)
    }
}

/// Little-endian `u32 dim, u32 count`, then per row `u32 id_len, id bytes, f32[dim]`.
pub fn write_embedding_file(path: &Path, dim: usize, rows: &[(&str, &[f32])]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + rows.len() * (dim * 4 + 16));
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for (id, v) in rows {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for x in *v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_embedding_file(path: &Path) -> Result<(usize, Vec<(String, Vec<f32>)>)> {
    let mut r = io::BufReader::new(fs::File::open(path)?);
    let mut word = [0u8; 4];
    let mut u32_le = |r: &mut io::BufReader<fs::File>| -> io::Result<u32> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let dim = u32_le(&mut r)? as usize;
    let count = u32_le(&mut r)? as usize;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_le(&mut r)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut raw = vec![0u8; dim * 4];
        r.read_exact(&mut raw)?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        rows.push((id, v));
    }
    Ok((dim, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn passages(texts: &[&str]) -> Vec<Passage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage {
                id: format!("p{i}"),
                title: None,
                text: t.to_string(),
            })
            .collect()
    }

    fn hashed(texts: &[&str], dim: usize) -> Embedder {
        Embedder::HashedTfIdf(HashedTfIdf::fit(&passages(texts), dim, DEFAULT_HASH_SEED, Analyzer::default()).unwrap())
    }

    fn unit(v: &[f32]) -> bool {
        (dot(v, v) - 1.0).abs() < 1e-6
    }

    #[test]
    fn embeddings_are_frozen_and_unit_length() {
        let e = hashed(&["abc def", "ghi"], 64);
        let a = e.embed("abc", Role::Query).unwrap();
        assert_eq!(a, e.embed("abc", Role::Query).unwrap());
        assert!(unit(&a));
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_rejected_or_flagged() {
        let e = hashed(&["abc"], 16);
        assert!(matches!(e.embed(" ,. ", Role::Query), Err(Error::EmptyText)));
        let (v, flagged) = e.embed_or_fallback("", Role::Query).unwrap();
        assert!(flagged && unit(&v));
    }

    #[test]
    fn disjoint_vocabularies_are_orthogonal() {
        let h = HashedTfIdf::fit(&passages(&["alpha beta", "gamma delta"]), 4096, 7, Analyzer::default()).unwrap();
        // Oracle: place each term by the hashing rule directly.
        let slot = |t: &str| {
            let x = fnv1a64(7, t.as_bytes());
            (x % 4096) as usize
        };
        let slots: Vec<usize> = ["alpha", "beta", "gamma", "delta"].iter().map(|t| slot(t)).collect();
        let mut uniq = slots.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 4, "pick a seed without collisions");
        let e = Embedder::HashedTfIdf(h);
        let a = e.embed("alpha beta", Role::Passage).unwrap();
        let b = e.embed("gamma delta", Role::Passage).unwrap();
        assert_eq!(cosine(&a, &b), 0.0);
        // each term lands in its own slot with magnitude idf/‖v‖
        for s in &slots[..2] {
            assert!(a[*s].abs() > 0.0);
        }
    }

    #[test]
    fn query_budget_truncates() {
        let e = hashed(&["a b"], 64);
        let long: String = std::iter::repeat("a").take(QUERY_TOKEN_BUDGET).chain(["b"]).collect::<Vec<_>>().join(" ");
        let only_a = e.embed("a", Role::Query).unwrap();
        assert_eq!(e.embed(&long, Role::Query).unwrap(), only_a);
        assert_ne!(e.embed(&long, Role::Passage).unwrap(), only_a);
    }

    fn one_hot(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn orthonormal_index() {
        let mut idx = DenseIndex::with_dim(3);
        for i in 0..3 {
            idx.push(format!("e{}", i + 1), &one_hot(3, i)).unwrap();
        }
        let res = idx.search(&one_hot(3, 1), 3).unwrap();
        assert_eq!(res.ranked[0].id, "e2");
        assert_eq!(res.ranked[0].score, 1.0);
        assert_eq!(idx.gold_rank(&one_hot(3, 1), "e2", 3).unwrap(), Rank::Found(1));
        assert_eq!(idx.gold_rank(&one_hot(3, 1), "e3", 1).unwrap(), Rank::NotFound);

        let mut idx4 = DenseIndex::with_dim(4);
        for i in 0..3 {
            idx4.push(format!("e{}", i + 1), &one_hot(4, i)).unwrap();
        }
        let res = idx4.search(&one_hot(4, 3), 3).unwrap();
        let order: Vec<&str> = res.ranked.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(order, ["e1", "e2", "e3"]);
        assert!(res.ranked.iter().all(|p| p.score == 0.0));
        assert!(matches!(idx4.search(&[1.0], 1), Err(Error::DimMismatch { expected: 4, actual: 1 })));
    }

    fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&v).unwrap()
    }

    #[test]
    fn search_matches_exhaustive_sort() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut idx = DenseIndex::with_dim(16);
        let mut stored = Vec::new();
        for i in 0..100 {
            let v = random_unit(&mut rng, 16);
            idx.push(format!("v{i}"), &v).unwrap();
            stored.push(v);
        }
        let q = random_unit(&mut rng, 16);
        let mut brute: Vec<(usize, f64)> = stored
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.iter().zip(&q).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = idx.search(&q, 10).unwrap();
        let expected: Vec<String> = brute[..10].iter().map(|(i, _)| format!("v{i}")).collect();
        let ids: Vec<String> = got.ranked.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids, expected);
        let gold = &expected[4];
        assert_eq!(idx.gold_rank(&q, gold, 10).unwrap(), Rank::Found(5));
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let mut idx = DenseIndex::with_dim(3);
        idx.push("a".into(), &[0.6, 0.8, 0.0]).unwrap();
        idx.push("bé".into(), &[0.0, 0.0, 1.0]).unwrap();
        idx.save(&path).unwrap();
        assert_eq!(DenseIndex::load(&path).unwrap(), idx);
        let ext = ExternalEmbeddings::load(&path).unwrap();
        assert_eq!(ext.rows["bé"], vec![0.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn cosine_of_self_and_negation(v in proptest::collection::vec(-1.0f64..1.0, 2..32)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let u = normalize(&v).unwrap();
            let neg: Vec<f32> = u.iter().map(|x| -x).collect();
            prop_assert!((cosine(&u, &u) - 1.0).abs() < 1e-6);
            prop_assert!((cosine(&u, &neg) + 1.0).abs() < 1e-6);
        }

        #[test]
        fn tiny_renormalization_noise_keeps_order(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut a = DenseIndex::with_dim(8);
            let mut b = DenseIndex::with_dim(8);
            for i in 0..30 {
                let v = random_unit(&mut rng, 8);
                let scale = 1.0 + rng.random_range(-1e-9..1e-9);
                let w: Vec<f32> = v.iter().map(|x| (f64::from(*x) * scale) as f32).collect();
                a.push(format!("{i}"), &v).unwrap();
                b.push(format!("{i}"), &w).unwrap();
            }
            let q = random_unit(&mut rng, 8);
            prop_assert_eq!(a.search(&q, 30).unwrap(), b.search(&q, 30).unwrap());
        }
    }
}
