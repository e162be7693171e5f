//! Label-smoothed cross-entropy and the ranking hinge, in plain arithmetic
//! and as graph nodes.

use crate::error::{Error, Result};
use crate::model::graph::{Graph, NodeId};
use crate::model::tensor::Tensor;

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!("label smoothing beta must be in [0, 1), got {beta}")));
    }
    Ok(())
}

/// Smoothed target: `1 - β` on the target, `β / (N - 1)` on every other token.
pub fn smoothing_distribution(target: usize, beta: f64, n: usize) -> Vec<f64> {
    let other = if n > 1 { beta / (n - 1) as f64 } else { 0.0 };
    let mut p = vec![other; n];
    p[target] = 1.0 - beta;
    p
}

/// Mean over positions of `-Σ_x p_s(x) log p(x)`.
pub fn label_smooth_ce(logprobs: &[Vec<f64>], targets: &[usize], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if targets.is_empty() || logprobs.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "{} positions of log-probs for {} targets",
            logprobs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (lp, &t) in logprobs.iter().zip(targets) {
        let ps = smoothing_distribution(t, beta, lp.len());
        total -= ps.iter().zip(lp).filter(|(p, _)| **p > 0.0).map(|(p, l)| p * l).sum::<f64>();
    }
    Ok(total / targets.len() as f64)
}

/// `Σ_i Σ_{j>i} max(0, f_j - f_i + (j - i) λ)` for scores in rank order.
pub fn contrastive_loss(scores: &[f64], lambda: f64) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 ranked scores, got {}", scores.len())));
    }
    let mut total = 0.0;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            total += (scores[j] - scores[i] + (j - i) as f64 * lambda).max(0.0);
        }
    }
    Ok(total)
}

/// Graph version of [`label_smooth_ce`] over a `T×N` log-prob node.
pub fn label_smooth_ce_node(g: &mut Graph<'_>, logprobs: NodeId, targets: &[usize], beta: f64) -> NodeId {
    let [t, n] = g.value(logprobs).shape();
    debug_assert_eq!(t, targets.len());
    let mut w = Tensor::zeros(t, n);
    for (row, &target) in targets.iter().enumerate() {
        let ps = smoothing_distribution(target, beta, n);
        for (x, p) in w.row_mut(row).iter_mut().zip(ps) {
            *x = -p / t as f64;
        }
    }
    g.weighted_sum(logprobs, w)
}

/// Length-normalized sequence score as a graph node.
pub fn sequence_score_node(g: &mut Graph<'_>, logprobs: NodeId, tokens: &[usize], alpha: f64) -> NodeId {
    let s = g.pick_sum(logprobs, tokens);
    g.scale(s, 1.0 / (tokens.len() as f64).powf(alpha))
}
