//! Few-shot prompts for label annotation: demonstration selection and
//! template rendering, plus the annotator clients in [`client`].

pub mod client;

use serde::{Deserialize, Serialize};

use crate::corpus::{HistoryTurn, ReformulationProblem};
use crate::error::{Error, Result};
use crate::fusion::RankedCandidateSet;
pub use client::{annotate, AnnotationRun, Annotator, HttpAnnotator, LabelCache, MockAnnotator, RetryPolicy};

pub const INSTRUCTION: &str = "Given a question and its context, decontextualize the question by addressing \
coreference and omission issues. The resulting question should retain its original meaning and be as \
informative as possible, and should not duplicate any previously asked questions in the context.";

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Qrecc,
    Topiocqa,
}

impl Template {
    /// Number of demonstrations used by default.
    pub fn default_m(self) -> usize {
        match self {
            Template::Qrecc => 3,
            Template::Topiocqa => 5,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "qrecc" => Ok(Template::Qrecc),
            "topiocqa" => Ok(Template::Topiocqa),
            other => Err(Error::Config(format!("unknown prompt template `{other}`"))),
        }
    }
}

/// A solved problem shown to the annotator with its best and worst rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub problem: ReformulationProblem,
    pub c_best: String,
    pub c_worst: String,
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub instruction: String,
    pub demonstrations: Vec<Demonstration>,
    pub target: ReformulationProblem,
    pub template: Template,
}

impl PromptSpec {
    pub fn new(template: Template, demonstrations: Vec<Demonstration>, target: ReformulationProblem) -> Self {
        Self {
            instruction: INSTRUCTION.to_string(),
            demonstrations,
            target,
            template,
        }
    }
}

/// Picks the `m` problems with the highest difficulty (fusion-score
/// variance). Ties keep input order.
pub fn select_demonstrations(sets: &[(ReformulationProblem, RankedCandidateSet)], m: usize) -> Vec<Demonstration> {
    let mut eligible: Vec<Demonstration> = sets
        .iter()
        .filter(|(_, s)| s.candidates.len() >= 2 && s.candidates.iter().all(|c| c.m.is_some()))
        .map(|(p, s)| Demonstration {
            problem: p.clone(),
            c_best: s.oracle().map(|c| c.text.clone()).unwrap_or_default(),
            c_worst: s.worst().map(|c| c.text.clone()).unwrap_or_default(),
            difficulty: s.difficulty(),
        })
        .collect();
    if eligible.len() < m {
        log::warn!("only {} eligible demonstration problems, wanted {m}", eligible.len());
    }
    eligible.sort_by(|a, b| b.difficulty.partial_cmp(&a.difficulty).unwrap_or(std::cmp::Ordering::Equal));
    eligible.truncate(m);
    eligible
}

/// `Q: q_1 A: r_1 Q: q_2 A: r_2 …`
pub fn render_context(history: &[HistoryTurn]) -> String {
    history
        .iter()
        .map(|t| format!("Q: {} A: {}", t.query, t.answer))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Instruction, one block per demonstration, then the target ending in the
/// `Good Rewrite:` cue. Both templates share this layout.
pub fn render_prompt(spec: &PromptSpec) -> String {
    let mut out = String::new();
    out.push_str(&spec.instruction);
    out.push_str("\n\n");
    for d in &spec.demonstrations {
        out.push_str(&format!(
            "Context: [{}]\nQuestion: {}\nGood Rewrite: {}\nBad Rewrite: {}\n\n",
            render_context(&d.problem.history),
            d.problem.current_query,
            d.c_best,
            d.c_worst
        ));
    }
    out.push_str(&format!(
        "Context: [{}]\nQuestion: {}\nGood Rewrite:",
        render_context(&spec.target.history),
        spec.target.current_query
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub problem_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub problem_id: String,
    pub label: String,
}

pub fn write_prompts(path: &std::path::Path, prompts: &[PromptRecord]) -> Result<()> {
    crate::corpus::write_jsonl(path, prompts)
}

pub fn load_prompts(path: &std::path::Path) -> Result<Vec<PromptRecord>> {
    crate::corpus::read_jsonl(path)
}

pub fn write_labels(path: &std::path::Path, labels: &[LabelRecord]) -> Result<()> {
    crate::corpus::write_jsonl(path, labels)
}

pub fn load_labels(path: &std::path::Path) -> Result<Vec<LabelRecord>> {
    let labels: Vec<LabelRecord> = crate::corpus::read_jsonl(path)?;
    if let Some(bad) = labels.iter().find(|l| l.label.trim().is_empty()) {
        return Err(Error::Invalid(format!("empty label for problem `{}`", bad.problem_id)));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::fusion::{Candidate, FusionScore};

    fn problem(i: usize) -> ReformulationProblem {
        ReformulationProblem {
            conversation_id: format!("c{i}"),
            turn_index: 2,
            current_query: format!("question {i}"),
            history: vec![HistoryTurn {
                query: "q".into(),
                answer: "a".into(),
                gold_passage_ids: vec![],
            }],
            gold_passage_ids: vec!["p".into()],
        }
    }

    fn set(i: usize, values: &[f64]) -> (ReformulationProblem, RankedCandidateSet) {
        let cands: Vec<Candidate> = values
            .iter()
            .enumerate()
            .map(|(k, &m)| Candidate {
                text: format!("cand {k}"),
                tokens: vec![],
                r_s: None,
                r_d: None,
                m: Some(m),
            })
            .collect();
        let scores: Vec<FusionScore> = cands.iter().map(|c| c.fusion().unwrap()).collect();
        let p = problem(i);
        (p.clone(), RankedCandidateSet::rank(p.id(), cands, &scores))
    }

    #[test]
    fn highest_variance_first() {
        // variances 0.1, 0.9, 0.5 scaled through spreads around 1
        let sets: Vec<_> = [0.1f64, 0.9, 0.5]
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let s = v.sqrt();
                set(i + 1, &[1.0 + s, 1.0 - s])
            })
            .collect();
        let picked = select_demonstrations(&sets, 2);
        let ids: Vec<_> = picked.iter().map(|d| d.problem.conversation_id.as_str()).collect();
        assert_eq!(ids, ["c2", "c3"]);
        assert!((picked[0].difficulty - 0.9).abs() < 1e-12);
        assert_eq!(picked[0].c_best, "cand 0");
        assert_eq!(picked[0].c_worst, "cand 1");
    }

    #[test]
    fn flat_sets_lose_to_any_positive_variance() {
        let sets = vec![set(1, &[0.5, 0.5, 0.5]), set(2, &[0.5, 0.4]), set(3, &[1.0, 1.0])];
        let picked = select_demonstrations(&sets, 2);
        assert_eq!(picked[0].problem.conversation_id, "c2");
        assert!((picked[0].difficulty - 0.0025).abs() < 1e-12);
        let picked = select_demonstrations(&sets, 1);
        assert_eq!(picked.len(), 1);
        assert_eq!(picked[0].problem.conversation_id, "c2");
    }

    #[test]
    fn short_pool_returns_everything() {
        let sets = vec![set(1, &[0.5, 0.1]), set(2, &[0.3])];
        assert_eq!(select_demonstrations(&sets, 3).len(), 1);
    }

    #[test]
    fn zero_shot_prompt() {
        let spec = PromptSpec::new(Template::Qrecc, vec![], problem(1));
        let text = render_prompt(&spec);
        assert_eq!(
            text,
            format!("{INSTRUCTION}\n\nContext: [Q: q A: a]\nQuestion: question 1\nGood Rewrite:")
        );
        assert!(!text.contains("Bad Rewrite"));
    }

    #[test]
    fn one_demonstration_has_one_pair_in_order() {
        let d = select_demonstrations(&[set(1, &[0.9, 0.1])], 1);
        let text = render_prompt(&PromptSpec::new(Template::Topiocqa, d, problem(2)));
        assert_eq!(text.matches("Good Rewrite:").count(), 2);
        assert_eq!(text.matches("Bad Rewrite:").count(), 1);
        let good = text.find("Good Rewrite: cand 0").unwrap();
        let bad = text.find("Bad Rewrite: cand 1").unwrap();
        assert!(good < bad);
        assert!(text.ends_with("Good Rewrite:"));
    }

    #[test]
    fn default_demo_counts() {
        assert_eq!(Template::Qrecc.default_m(), 3);
        assert_eq!(Template::Topiocqa.default_m(), 5);
    }

    proptest! {
        #[test]
        fn selection_invariant_under_rescaling(
            values in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2..6), 1..8),
            c in 0.01f64..100.0,
            m in 0usize..5,
        ) {
            let base: Vec<_> = values.iter().enumerate().map(|(i, v)| set(i, v)).collect();
            let scaled: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(i, v)| set(i, &v.iter().map(|x| x * c).collect::<Vec<_>>()))
                .collect();
            let a: Vec<_> = select_demonstrations(&base, m).into_iter().map(|d| d.problem.id()).collect();
            let b: Vec<_> = select_demonstrations(&scaled, m).into_iter().map(|d| d.problem.id()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
