//! Beam search and diverse beam search over a step-wise scorer.
//!
//! Plain beam search is diverse beam search with a single group. The
//! diversity penalty only steers selection; reported scores are the true
//! length-normalized log-likelihoods, so re-scoring a returned sequence with
//! [`SeqModel::sequence_score`] reproduces its score.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{length_normalized, vocab, EncodedProblem, SeqModel, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Beam,
    DiverseBeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub groups: usize,
    pub diversity_penalty: f64,
    /// Minimum number of tokens before EOS may be emitted.
    pub min_len: usize,
    /// Maximum sequence length, EOS included.
    pub max_len: usize,
    pub length_penalty: f64,
}

impl DecodeConfig {
    pub fn beam(beam_size: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size,
            groups: 1,
            diversity_penalty: 0.0,
            min_len: 8,
            max_len: 64,
            length_penalty: 0.6,
        }
    }

    /// `n` candidates in `n / 2` groups with penalty 2.0.
    pub fn diverse(n: usize) -> Self {
        Self {
            strategy: Strategy::DiverseBeam,
            beam_size: n,
            groups: (n / 2).max(1),
            diversity_penalty: 2.0,
            ..Self::beam(n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.groups == 0 || self.beam_size % self.groups != 0 {
            return Err(Error::Config(format!(
                "beam_size {} is not divisible by groups {}",
                self.beam_size, self.groups
            )));
        }
        if self.strategy == Strategy::Beam && self.groups != 1 {
            return Err(Error::Config("plain beam search uses a single group".into()));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need 0 < max_len and min_len <= max_len, got min {} max {}",
                self.min_len, self.max_len
            )));
        }
        if !self.diversity_penalty.is_finite() || !self.length_penalty.is_finite() {
            return Err(Error::Config("penalties must be finite".into()));
        }
        Ok(())
    }
}

/// Anything that yields a next-token log distribution for a prefix.
pub trait StepScorer {
    fn next_logprobs(&self, prefix: &[usize]) -> Vec<f64>;

    fn eos(&self) -> usize {
        vocab::EOS
    }
}

impl StepScorer for Session<'_> {
    fn next_logprobs(&self, prefix: &[usize]) -> Vec<f64> {
        Session::next_logprobs(self, prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub logprob: f64,
    /// `logprob / len^α`.
    pub score: f64,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiverseOutput {
    /// Groups flattened in order, deduplicated, then padded.
    pub candidates: Vec<Hypothesis>,
    /// Each group's own beams before flattening.
    pub groups: Vec<Vec<Hypothesis>>,
    /// Distinct sequences among the flattened group beams, before padding.
    pub unique: usize,
}

struct Group {
    alive: Vec<Hypothesis>,
    finished: Vec<Hypothesis>,
    done: bool,
}

pub fn beam_search(model: &SeqModel, encoded: &EncodedProblem, config: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    if config.strategy != Strategy::Beam {
        return Err(Error::Config("beam_search expects the beam strategy".into()));
    }
    check_length(model, config)?;
    beam_search_with(&model.session(encoded)?, config)
}

pub fn diverse_beam_search(model: &SeqModel, encoded: &EncodedProblem, config: &DecodeConfig) -> Result<DiverseOutput> {
    check_length(model, config)?;
    diverse_beam_search_with(&model.session(encoded)?, config)
}

/// Dispatches on `config.strategy`.
pub fn generate(model: &SeqModel, encoded: &EncodedProblem, config: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    match config.strategy {
        Strategy::Beam => beam_search(model, encoded, config),
        Strategy::DiverseBeam => Ok(diverse_beam_search(model, encoded, config)?.candidates),
    }
}

fn check_length(model: &SeqModel, config: &DecodeConfig) -> Result<()> {
    if config.max_len > model.arch().max_tgt_len {
        return Err(Error::Config(format!(
            "max_len {} exceeds the model target limit {}",
            config.max_len,
            model.arch().max_tgt_len
        )));
    }
    Ok(())
}

pub fn beam_search_with(scorer: &impl StepScorer, config: &DecodeConfig) -> Result<Vec<Hypothesis>> {
    config.validate()?;
    let mut single = *config;
    single.groups = 1;
    Ok(run(scorer, &single).0.remove(0))
}

pub fn diverse_beam_search_with(scorer: &impl StepScorer, config: &DecodeConfig) -> Result<DiverseOutput> {
    config.validate()?;
    let (groups, reserve) = run(scorer, config);
    let mut seen = HashSet::new();
    let mut candidates = Vec::with_capacity(config.beam_size);
    for h in groups.iter().flatten() {
        if seen.insert(h.tokens.clone()) {
            candidates.push(h.clone());
        }
    }
    let unique = candidates.len();
    for h in reserve {
        if candidates.len() >= config.beam_size {
            break;
        }
        if seen.insert(h.tokens.clone()) {
            candidates.push(h);
        }
    }
    Ok(DiverseOutput {
        candidates,
        groups,
        unique,
    })
}

/// Returns each group's top beams plus all other finished hypotheses sorted
/// by score, for padding.
fn run(scorer: &impl StepScorer, config: &DecodeConfig) -> (Vec<Vec<Hypothesis>>, Vec<Hypothesis>) {
    let width = config.beam_size / config.groups;
    let eos = scorer.eos();
    let alpha = config.length_penalty;
    let mut groups: Vec<Group> = (0..config.groups)
        .map(|_| Group {
            alive: vec![Hypothesis {
                tokens: Vec::new(),
                logprob: 0.0,
                score: 0.0,
            }],
            finished: Vec::new(),
            done: false,
        })
        .collect();

    for step in 0..config.max_len {
        let mut chosen: Vec<usize> = Vec::new();
        for group in groups.iter_mut() {
            if group.done {
                continue;
            }
            let mut pool: Vec<(f64, usize, usize, f64)> = Vec::new();
            for (hi, hyp) in group.alive.iter().enumerate() {
                let mut lp = scorer.next_logprobs(&hyp.tokens);
                if hyp.tokens.len() < config.min_len {
                    lp[eos] = f64::NEG_INFINITY;
                }
                for (tok, &l) in lp.iter().enumerate() {
                    if l == f64::NEG_INFINITY {
                        continue;
                    }
                    let penalty = config.diversity_penalty * chosen.iter().filter(|&&c| c == tok).count() as f64;
                    pool.push((hyp.logprob + l - penalty, hi, tok, l));
                }
            }
            pool.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });
            let mut next = Vec::with_capacity(width);
            for (rank, &(_, hi, tok, l)) in pool.iter().take(2 * width).enumerate() {
                if next.len() >= width {
                    break;
                }
                let parent = &group.alive[hi];
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                let logprob = parent.logprob + l;
                let h = Hypothesis {
                    score: length_normalized_sum(logprob, tokens.len(), alpha),
                    tokens,
                    logprob,
                };
                if tok == eos {
                    if rank < width {
                        chosen.push(tok);
                        group.finished.push(h);
                    }
                } else {
                    chosen.push(tok);
                    if h.tokens.len() >= config.max_len {
                        group.finished.push(h);
                    } else {
                        next.push(h);
                    }
                }
            }
            group.alive = next;
            group.done = group.alive.is_empty() || cannot_improve(group, width, step + 1, config);
        }
        if groups.iter().all(|g| g.done) {
            break;
        }
    }

    let mut tops = Vec::with_capacity(groups.len());
    let mut reserve = Vec::new();
    for mut g in groups {
        g.finished.sort_by(by_score);
        let rest = g.finished.split_off(g.finished.len().min(width));
        reserve.extend(rest);
        tops.push(g.finished);
    }
    reserve.sort_by(by_score);
    (tops, reserve)
}

fn length_normalized_sum(logprob: f64, len: usize, alpha: f64) -> f64 {
    logprob / (len as f64).powf(alpha)
}

/// True once `width` hypotheses are finished and no alive one can still beat
/// the worst of them. Log-probabilities only decrease, so an alive prefix's
/// best attainable score uses its current sum at the most favorable length.
fn cannot_improve(group: &Group, width: usize, cur_len: usize, config: &DecodeConfig) -> bool {
    if group.finished.len() < width || cur_len < config.min_len {
        return false;
    }
    let mut scores: Vec<f64> = group.finished.iter().map(|h| h.score).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let worst_kept = scores[width - 1];
    let alpha = config.length_penalty;
    let best_len = if alpha >= 0.0 { config.max_len } else { cur_len + 1 };
    group
        .alive
        .iter()
        .all(|h| length_normalized_sum(h.logprob, best_len, alpha) < worst_kept)
}

/// Checks a hypothesis's reported score against the model's own scoring path.
pub fn rescore(model: &SeqModel, encoded: &EncodedProblem, hyp: &Hypothesis, alpha: f64) -> Result<f64> {
    let lp = model.candidate_token_logprobs(encoded, &hyp.tokens)?;
    Ok(length_normalized(&lp, alpha))
}
