mod common;

use std::collections::{BTreeMap, HashMap};

use approx::assert_abs_diff_eq;
use cqr_core::corpus::{Passage, PassageCollection, ReformulationProblem};
use cqr_core::evaluation::{evaluate, metrics, topic_split, EvalRun, ProblemEval, Split, DEFAULT_KS};
use cqr_core::retrieval::{Rank, Retrievers};
use cqr_core::sparse::{Bm25Params, SparseIndex};
use cqr_core::text::Analyzer;
use proptest::prelude::*;

#[test]
fn hand_labelled_topic_splits() {
    let (problems, expected) = common::topic_fixture();
    let (tags, counts) = topic_split(&problems);
    assert_eq!(tags, expected);
    assert_eq!(counts.problems, 14);
    assert_eq!(counts.excluded, 1);
    assert_eq!(counts.topic_shifted, 5);
    assert_eq!(counts.topic_concentrated, 8);
    assert_eq!(counts.first_turn_by_convention, 3);
}

#[test]
fn five_rank_metrics() {
    let m = metrics(&common::five_rank_fixture(), &DEFAULT_KS);
    assert_abs_diff_eq!(m["mrr"], common::FIVE_RANK_MRR, epsilon = 1e-12);
    assert_abs_diff_eq!(m["ndcg@3"], common::five_rank_ndcg3(), epsilon = 1e-12);
    assert_abs_diff_eq!(m["recall@10"], common::FIVE_RANK_R10, epsilon = 1e-12);
    assert_abs_diff_eq!(m["recall@100"], common::FIVE_RANK_R100, epsilon = 1e-12);
}

fn run_with_ranks(problems: &[ReformulationProblem], ranks: &[Rank]) -> EvalRun {
    let (tags, counts) = topic_split(problems);
    let evals = problems
        .iter()
        .zip(tags)
        .filter_map(|(p, t)| t.map(|s| (p, s)))
        .zip(ranks.iter().cycle())
        .map(|((p, split), &r)| ProblemEval {
            problem_id: p.id(),
            split,
            query: p.current_query.clone(),
            ranks: BTreeMap::from([("bm25".to_string(), r)]),
        })
        .collect();
    EvalRun::from_problems(evals, counts, &DEFAULT_KS)
}

fn assert_recombines(run: &EvalRun) {
    let c = &run.report.counts;
    let (nc, ns) = (c.topic_concentrated as f64, c.topic_shifted as f64);
    let all = &run.report.retrievers["bm25"];
    let conc = &run.report.splits[Split::TopicConcentrated.name()]["bm25"];
    let shift = &run.report.splits[Split::TopicShifted.name()]["bm25"];
    for (k, v) in all {
        let combined = (nc * conc[k] + ns * shift[k]) / (nc + ns);
        assert!((combined - v).abs() <= 1e-12, "{k}: {combined} vs {v}");
    }
}

#[test]
fn split_metrics_recombine_on_fixture() {
    let (problems, _) = common::topic_fixture();
    assert_recombines(&run_with_ranks(&problems, &common::five_rank_fixture()));
}

proptest! {
    #[test]
    fn split_metrics_recombine(ranks in prop::collection::vec(prop_oneof![Just(Rank::NotFound), (1u32..200).prop_map(Rank::Found)], 1..20)) {
        let (problems, _) = common::topic_fixture();
        assert_recombines(&run_with_ranks(&problems, &ranks));
    }
}

#[test]
fn evaluate_retrieves_each_reformulation() {
    let passages = PassageCollection::new(vec![
        Passage { id: "p1".into(), title: None, text: "olvera exports salt and wool".into() },
        Passage { id: "p2".into(), title: None, text: "the climate of olvera is mild".into() },
        Passage { id: "p3".into(), title: None, text: "dunmore has a famous bridge".into() },
    ])
    .unwrap();
    let (problems, _) = common::topic_fixture();
    let problems: Vec<ReformulationProblem> = problems
        .into_iter()
        .filter(|p| p.conversation_id == "c1")
        .map(|mut p| {
            p.gold_passage_ids.retain(|g| g == "p1" || g == "p2");
            p
        })
        .collect();
    let sparse = SparseIndex::build(&passages, Bm25Params::QRECC, Analyzer::default()).unwrap();
    let retr = Retrievers { sparse: Some(&sparse), dense: None, depth: 10 };
    let refs: HashMap<String, String> = problems
        .iter()
        .map(|p| {
            let q = match p.gold_passage_ids.first().map(String::as_str) {
                Some("p1") => "what does olvera export",
                _ => "climate",
            };
            (p.id(), q.to_string())
        })
        .collect();
    let run = evaluate(&problems, &refs, &retr, &DEFAULT_KS).unwrap();
    assert_eq!(run.problems.len(), 4);
    assert!(run.problems.iter().all(|p| p.ranks["bm25"] == Rank::Found(1)));
    assert_eq!(run.report.retrievers["bm25"]["mrr"], 1.0);
    assert!(!run.report.retrievers.contains_key("dense"));
}
