//! Retrieval metrics and the topic-shift breakdown.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ReformulationProblem;
use crate::error::{Error, Result};
use crate::retrieval::{Rank, Retrievers};

pub const DEFAULT_KS: [usize; 2] = [10, 100];

/// Mean reciprocal rank; NOT_FOUND counts as 0.
pub fn mrr(ranks: &[Rank]) -> f64 {
    mean(ranks.iter().map(|r| r.reciprocal()))
}

/// Binary-relevance NDCG with cutoff 3 and one gold passage (ideal DCG 1).
pub fn ndcg_at_3(rank: Rank) -> f64 {
    match rank {
        Rank::Found(r) if r <= 3 => 1.0 / (f64::from(r) + 1.0).log2(),
        _ => 0.0,
    }
}

pub fn recall_at_k(rank: Rank, k: usize) -> f64 {
    match rank {
        Rank::Found(r) if r as usize <= k => 1.0,
        _ => 0.0,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    TopicConcentrated,
    TopicShifted,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::All => "all",
            Split::TopicConcentrated => "topic_concentrated",
            Split::TopicShifted => "topic_shifted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub problems: usize,
    pub topic_concentrated: usize,
    pub topic_shifted: usize,
    pub excluded: usize,
    /// First turns, tagged concentrated because there is nothing to shift from.
    pub first_turn_by_convention: usize,
}

/// Tags each problem; `None` marks problems without gold passages.
pub fn topic_split(problems: &[ReformulationProblem]) -> (Vec<Option<Split>>, SplitCounts) {
    let mut counts = SplitCounts {
        problems: problems.len(),
        ..SplitCounts::default()
    };
    let tags = problems
        .iter()
        .map(|p| {
            if p.gold_passage_ids.is_empty() {
                counts.excluded += 1;
                return None;
            }
            let tag = if p.history.is_empty() {
                counts.first_turn_by_convention += 1;
                Split::TopicConcentrated
            } else {
                let prior: HashSet<&str> = p
                    .history
                    .iter()
                    .flat_map(|h| h.gold_passage_ids.iter().map(String::as_str))
                    .collect();
                if p.gold_passage_ids.iter().any(|g| prior.contains(g.as_str())) {
                    Split::TopicConcentrated
                } else {
                    Split::TopicShifted
                }
            };
            match tag {
                Split::TopicConcentrated => counts.topic_concentrated += 1,
                _ => counts.topic_shifted += 1,
            }
            Some(tag)
        })
        .collect();
    (tags, counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemEval {
    pub problem_id: String,
    pub split: Split,
    pub query: String,
    /// Keyed by retriever name (`bm25`, `dense`).
    pub ranks: BTreeMap<String, Rank>,
}

pub type Metrics = BTreeMap<String, f64>;

/// `mrr`, `ndcg@3` and `recall@K` for each K.
pub fn metrics(ranks: &[Rank], ks: &[usize]) -> Metrics {
    let mut m = Metrics::new();
    m.insert("mrr".into(), mrr(ranks));
    m.insert("ndcg@3".into(), mean(ranks.iter().map(|&r| ndcg_at_3(r))));
    for &k in ks {
        m.insert(format!("recall@{k}"), mean(ranks.iter().map(|&r| recall_at_k(r, k))));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub retrievers: BTreeMap<String, Metrics>,
    /// split name -> retriever -> metrics
    pub splits: BTreeMap<String, BTreeMap<String, Metrics>>,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub problems: Vec<ProblemEval>,
    pub report: Report,
}

impl EvalRun {
    /// Aggregates per-problem ranks overall and per split.
    pub fn from_problems(problems: Vec<ProblemEval>, counts: SplitCounts, ks: &[usize]) -> Self {
        let names: Vec<String> = problems
            .first()
            .map(|p| p.ranks.keys().cloned().collect())
            .unwrap_or_default();
        let agg = |filter: &dyn Fn(&ProblemEval) -> bool| -> BTreeMap<String, Metrics> {
            names
                .iter()
                .map(|n| {
                    let ranks: Vec<Rank> = problems.iter().filter(|p| filter(p)).map(|p| p.ranks[n]).collect();
                    (n.clone(), metrics(&ranks, ks))
                })
                .collect()
        };
        let retrievers = agg(&|_| true);
        let mut splits = BTreeMap::new();
        for s in [Split::TopicConcentrated, Split::TopicShifted] {
            splits.insert(s.name().to_string(), agg(&|p| p.split == s));
        }
        Self {
            report: Report {
                retrievers,
                splits,
                counts,
            },
            problems,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.report)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// One row per (split, retriever) with a column per metric.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let metric_names: Vec<String> = self
            .report
            .retrievers
            .values()
            .next()
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default();
        let mut out = format!("split,retriever,{},count\n", metric_names.join(","));
        let counts = &self.report.counts;
        let mut rows: Vec<(&str, &BTreeMap<String, Metrics>, usize)> =
            vec![("all", &self.report.retrievers, counts.topic_concentrated + counts.topic_shifted)];
        for (name, by_ret) in &self.report.splits {
            let n = if name == Split::TopicConcentrated.name() {
                counts.topic_concentrated
            } else {
                counts.topic_shifted
            };
            rows.push((name, by_ret, n));
        }
        for (split, by_ret, n) in rows {
            for (ret, m) in by_ret {
                let vals: Vec<String> = metric_names.iter().map(|k| m[k].to_string()).collect();
                out.push_str(&format!("{split},{ret},{},{n}\n", vals.join(",")));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReformulationRecord {
    pub problem_id: String,
    pub reformulation: String,
}

/// Retrieves every problem's reformulation with each available retriever
/// and aggregates the metrics.
pub fn evaluate(
    problems: &[ReformulationProblem],
    reformulations: &HashMap<String, String>,
    retrievers: &Retrievers<'_>,
    ks: &[usize],
) -> Result<EvalRun> {
    let (tags, counts) = topic_split(problems);
    let mut evals = Vec::new();
    for (p, tag) in problems.iter().zip(tags) {
        let Some(split) = tag else { continue };
        let id = p.id();
        let query = reformulations
            .get(&id)
            .ok_or_else(|| Error::Invalid(format!("no reformulation for problem `{id}`")))?;
        let mut ranks = BTreeMap::new();
        if let Some(r) = retrievers.sparse_rank(query, &p.gold_passage_ids) {
            ranks.insert("bm25".to_string(), r);
        }
        if let Some(r) = retrievers.dense_rank(query, &p.gold_passage_ids)? {
            ranks.insert("dense".to_string(), r);
        }
        evals.push(ProblemEval {
            problem_id: id,
            split,
            query: query.clone(),
            ranks,
        });
    }
    Ok(EvalRun::from_problems(evals, counts, ks))
}
