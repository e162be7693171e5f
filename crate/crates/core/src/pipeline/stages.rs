//! In-memory stage functions. The `cmd_*` wrappers add files, manifests and
//! dependency checks around these.

use std::collections::HashMap;

use crate::corpus::{Conversation, PassageCollection, ReformulationProblem};
use crate::decoding::{diverse_beam_search, generate, DecodeConfig, Strategy};
use crate::dense::{cosine, DenseIndex, Embedder, Role};
use crate::error::{Error, Result};
use crate::fusion::{dice_overlap, fusion_metric, kendall_tau_b, AlignmentPoint, Candidate, RankedCandidateSet};
use crate::model::{vocab, SeqModel, Vocabulary};
use crate::retrieval::{Rank, Retrievers};
use crate::text::Analyzer;
use crate::training::{target_tokens, TrainItem};

/// Decoded candidates of one problem before ranking.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CandidateSet {
    pub problem_id: String,
    pub candidates: Vec<Candidate>,
    /// Distinct sequences before padding.
    pub unique: usize,
}

/// Vocabulary over passages, training conversations and labels.
pub fn build_vocabulary<'a>(
    passages: &'a PassageCollection,
    conversations: &'a [Conversation],
    labels: impl IntoIterator<Item = &'a str>,
) -> Vocabulary {
    let mut texts: Vec<&str> = passages.iter().map(|p| p.text.as_str()).collect();
    for c in conversations {
        for t in &c.turns {
            texts.push(&t.query);
            texts.push(&t.answer);
        }
    }
    texts.extend(labels);
    Vocabulary::build(texts, 1)
}

fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.split_last() {
        Some((&vocab::EOS, rest)) => rest,
        _ => tokens,
    }
}

pub fn generate_candidates(model: &SeqModel, problems: &[ReformulationProblem], config: &DecodeConfig) -> Result<Vec<CandidateSet>> {
    problems
        .iter()
        .map(|p| {
            let enc = model.encode_problem(p)?;
            let (hyps, unique) = match config.strategy {
                Strategy::DiverseBeam => {
                    let out = diverse_beam_search(model, &enc, config)?;
                    (out.candidates, out.unique)
                }
                Strategy::Beam => {
                    let hyps = generate(model, &enc, config)?;
                    let n = hyps.len();
                    (hyps, n)
                }
            };
            let candidates = hyps
                .into_iter()
                .map(|h| Candidate {
                    text: model.detokenize(strip_eos(&h.tokens)),
                    tokens: h.tokens,
                    r_s: None,
                    r_d: None,
                    m: None,
                })
                .collect();
            Ok(CandidateSet {
                problem_id: p.id(),
                candidates,
                unique,
            })
        })
        .collect()
}

/// Scores every candidate by the fusion of its gold ranks and orders the set.
pub fn rank_sets(problems: &[ReformulationProblem], sets: Vec<CandidateSet>, retrievers: &Retrievers<'_>) -> Result<Vec<RankedCandidateSet>> {
    let by_id: HashMap<String, &ReformulationProblem> = problems.iter().map(|p| (p.id(), p)).collect();
    sets.into_iter()
        .map(|set| {
            let p = by_id
                .get(&set.problem_id)
                .ok_or_else(|| Error::UnknownId(set.problem_id.clone()))?;
            let scores = set
                .candidates
                .iter()
                .map(|c| {
                    let r_s = retrievers.sparse_rank(&c.text, &p.gold_passage_ids).unwrap_or(Rank::NotFound);
                    let r_d = retrievers.dense_rank(&c.text, &p.gold_passage_ids)?.unwrap_or(Rank::NotFound);
                    Ok(fusion_metric(r_s, r_d))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RankedCandidateSet::rank(set.problem_id, set.candidates, &scores))
        })
        .collect()
}

/// Candidate token ids, re-encoded from text if a set came without them.
fn candidate_tokens(model: &SeqModel, c: &Candidate) -> Vec<usize> {
    if !c.tokens.is_empty() && c.tokens.iter().all(|&t| t < model.arch().vocab_size) {
        c.tokens.clone()
    } else {
        target_tokens(model, &c.text)
    }
}

/// Training items with labels and, when given, ranked candidates in fusion order.
pub fn train_items(
    model: &SeqModel,
    problems: &[ReformulationProblem],
    labels: &HashMap<String, String>,
    ranked: Option<&[RankedCandidateSet]>,
) -> Result<Vec<TrainItem>> {
    let sets: HashMap<&str, &RankedCandidateSet> = ranked
        .unwrap_or(&[])
        .iter()
        .map(|s| (s.problem_id.as_str(), s))
        .collect();
    problems
        .iter()
        .map(|p| {
            let id = p.id();
            let label = labels
                .get(&id)
                .ok_or_else(|| Error::Invalid(format!("no label for problem `{id}`")))?;
            let mut item = TrainItem::new(model, p, label)?;
            if let Some(set) = sets.get(id.as_str()) {
                item.ranked = set.ordered().map(|c| candidate_tokens(model, c)).collect();
            }
            Ok(item)
        })
        .collect()
}

/// Best decoded rewrite per problem id.
pub fn reformulate(model: &SeqModel, problems: &[ReformulationProblem], config: &DecodeConfig) -> Result<HashMap<String, String>> {
    problems
        .iter()
        .map(|p| {
            let enc = model.encode_problem(p)?;
            let best = generate(model, &enc, config)?
                .into_iter()
                .next()
                .map(|h| model.detokenize(strip_eos(&h.tokens)))
                .unwrap_or_default();
            Ok((p.id(), best))
        })
        .collect()
}

/// Mean Kendall τ-b between the model's scores and the fusion values over
/// sets whose τ is defined. Returns `(mean, sets used)`.
pub fn mean_kendall_tau(model: &SeqModel, problems: &[ReformulationProblem], sets: &[RankedCandidateSet], alpha: f64) -> Result<(f64, usize)> {
    let by_id: HashMap<String, &ReformulationProblem> = problems.iter().map(|p| (p.id(), p)).collect();
    let (mut total, mut used) = (0.0, 0);
    for set in sets {
        let Some(p) = by_id.get(&set.problem_id) else { continue };
        let enc = model.encode_problem(p)?;
        let model_scores = set
            .candidates
            .iter()
            .map(|c| model.sequence_score(&enc, &candidate_tokens(model, c), alpha))
            .collect::<Result<Vec<_>>>()?;
        if let Some(tau) = kendall_tau_b(&model_scores, &set.values()) {
            total += tau;
            used += 1;
        }
    }
    Ok((if used == 0 { 0.0 } else { total / used as f64 }, used))
}

/// Mean DICE (term overlap) and mean cosine (embedding similarity) between
/// each reformulation and its first gold passage.
pub fn alignment_point(
    epoch: usize,
    problems: &[ReformulationProblem],
    reformulations: &HashMap<String, String>,
    passages: &PassageCollection,
    dense: (&DenseIndex, &Embedder),
    analyzer: &Analyzer,
) -> Result<AlignmentPoint> {
    let (index, embedder) = dense;
    let (mut dice, mut cos, mut n, mut skipped) = (0.0, 0.0, 0usize, 0usize);
    for p in problems {
        let gold = p.gold_passage_ids.first().and_then(|g| passages.get(g).zip(index.ids().iter().position(|i| i == g)));
        let (Some((passage, ord)), Some(text)) = (gold, reformulations.get(&p.id())) else {
            skipped += 1;
            continue;
        };
        dice += dice_overlap(&analyzer.tokenize(text), &analyzer.tokenize(&passage.text));
        let (v, _) = embedder.embed_or_fallback(text, Role::Query)?;
        cos += cosine(&v, index.vector(ord));
        n += 1;
    }
    let d = n.max(1) as f64;
    Ok(AlignmentPoint {
        epoch,
        mean_dice: dice / d,
        mean_cosine: cos / d,
        skipped,
    })
}

/// One [`AlignmentPoint`] per checkpoint, in order.
pub fn alignment_trace(
    checkpoints: &[SeqModel],
    problems: &[ReformulationProblem],
    passages: &PassageCollection,
    dense: (&DenseIndex, &Embedder),
    analyzer: &Analyzer,
    decode: &DecodeConfig,
) -> Result<Vec<AlignmentPoint>> {
    if checkpoints.is_empty() {
        return Err(Error::Invalid("alignment trace needs at least one checkpoint".into()));
    }
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let refs = reformulate(m, problems, decode)?;
            alignment_point(i + 1, problems, &refs, passages, dense, analyzer)
        })
        .collect()
}
