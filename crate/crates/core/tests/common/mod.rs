//! Fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::path::PathBuf;

use cqr_core::annotation::{Demonstration, PromptSpec, Template};
use cqr_core::corpus::{expand_problems, Conversation, HistoryTurn, ReformulationProblem, Turn};
use cqr_core::evaluation::Split;
use cqr_core::retrieval::Rank;

pub fn golden_path(template: Template) -> PathBuf {
    let name = match template {
        Template::Qrecc => "qrecc.txt",
        Template::Topiocqa => "topiocqa.txt",
    };
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn history(prefix: &str, turns: usize) -> Vec<HistoryTurn> {
    (1..=turns)
        .map(|t| HistoryTurn {
            query: format!("{prefix} question {t}"),
            answer: format!("{prefix} answer {t}"),
            gold_passage_ids: vec![],
        })
        .collect()
}

/// Placeholder prompt with the template's default number of demonstrations.
/// Demonstration k has k history turns.
pub fn placeholder_prompt(template: Template) -> PromptSpec {
    let demos = (1..=template.default_m())
        .map(|k| Demonstration {
            problem: ReformulationProblem {
                conversation_id: format!("demo{k}"),
                turn_index: k + 1,
                current_query: format!("demo {k} current question"),
                history: history(&format!("demo {k}"), k),
                gold_passage_ids: vec![],
            },
            c_best: format!("demo {k} good rewrite"),
            c_worst: format!("demo {k} bad rewrite"),
            difficulty: 1.0 / k as f64,
        })
        .collect();
    let target = ReformulationProblem {
        conversation_id: "target".into(),
        turn_index: 3,
        current_query: "target current question".into(),
        history: history("target", 2),
        gold_passage_ids: vec![],
    };
    PromptSpec::new(template, demos, target)
}

fn turn(gold: &[&str]) -> Turn {
    Turn {
        query: "q".into(),
        answer: "a".into(),
        gold_passage_ids: gold.iter().map(|s| s.to_string()).collect(),
    }
}

/// Conversations whose turns carry hand-assigned topic tags. `None` marks a
/// turn without gold passages.
pub fn topic_fixture() -> (Vec<ReformulationProblem>, Vec<Option<Split>>) {
    use Split::{TopicConcentrated as C, TopicShifted as S};
    let convs = vec![
        Conversation {
            id: "c1".into(),
            turns: vec![turn(&["p1"]), turn(&["p1"]), turn(&["p2"]), turn(&["p1"]), turn(&[])],
        },
        Conversation {
            id: "c2".into(),
            turns: vec![turn(&["p3"]), turn(&["p4", "p3"]), turn(&["p5"]), turn(&["p5"]), turn(&["p6"])],
        },
        Conversation {
            id: "c3".into(),
            turns: vec![turn(&["p7"]), turn(&["p8"]), turn(&["p9"]), turn(&["p8", "p10"])],
        },
    ];
    let labels = vec![
        // c1: first turn, same passage, new passage, back to the first, no gold
        Some(C), Some(C), Some(S), Some(C), None,
        // c2: a shared gold id is enough to stay on topic
        Some(C), Some(C), Some(S), Some(C), Some(S),
        // c3
        Some(C), Some(S), Some(S), Some(C),
    ];
    (expand_problems(&convs, false), labels)
}

/// Five gold ranks and their metrics worked out by hand:
/// MRR = (1 + 1/2 + 1/5 + 0 + 1/12) / 5, NDCG@3 = (1 + 1/log2(3)) / 5,
/// R@10 = 3/5, R@100 = 4/5.
pub fn five_rank_fixture() -> Vec<Rank> {
    vec![Rank::Found(1), Rank::Found(2), Rank::Found(5), Rank::NotFound, Rank::Found(12)]
}

pub const FIVE_RANK_MRR: f64 = (1.0 + 0.5 + 0.2 + 0.0 + 1.0 / 12.0) / 5.0;
pub const FIVE_RANK_R10: f64 = 0.6;
pub const FIVE_RANK_R100: f64 = 0.8;

pub fn five_rank_ndcg3() -> f64 {
    (1.0 + 1.0 / 3f64.log2()) / 5.0
}

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// The shipped toy config pointed at `workdir`.
pub fn toy_config(workdir: &std::path::Path) -> cqr_core::pipeline::PipelineConfig {
    let mut cfg = cqr_core::pipeline::PipelineConfig::load(&toy_dir().join("config.json")).unwrap();
    cfg.paths.workdir = workdir.to_path_buf();
    cfg
}

/// The toy config shrunk until every stage runs in seconds.
pub fn tiny_config(workdir: &std::path::Path) -> cqr_core::pipeline::PipelineConfig {
    let mut cfg = toy_config(workdir);
    cfg.model.d_model = 16;
    cfg.model.d_ff = 32;
    cfg.stage1.epochs = 1;
    cfg.stage1.batch_size = 16;
    cfg.stage2.epochs = 2;
    cfg.stage2.batch_size = 16;
    cfg.stage2.n = 4;
    cfg.candidates.beam_size = 4;
    cfg.candidates.groups = 2;
    cfg.reformulate.beam_size = 2;
    cfg.validate().unwrap();
    cfg
}
