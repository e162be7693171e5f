//! Fusion of sparse and dense gold ranks, candidate ordering, problem
//! difficulty, and the term/semantic alignment diagnostics.
//!
//! A passage missing from a ranked list is treated as infinitely far down:
//! its reciprocal contributes zero, so the fusion value stays in `[0, 2]`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::Rank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionScore {
    pub r_s: Rank,
    pub r_d: Rank,
    pub value: f64,
}

/// `(r_s + r_d) / (r_s · r_d)`, i.e. `1/r_s + 1/r_d`.
pub fn fusion_metric(r_s: Rank, r_d: Rank) -> FusionScore {
    let value = match (r_s, r_d) {
        (Rank::Found(s), Rank::Found(d)) => {
            let (s, d) = (f64::from(s), f64::from(d));
            (s + d) / (s * d)
        }
        _ => r_s.reciprocal() + r_d.reciprocal(),
    };
    FusionScore { r_s, r_d, value }
}

/// Fusion metric from raw integer ranks; `None` is a missing passage.
pub fn fusion_from_raw(r_s: Option<i64>, r_d: Option<i64>) -> Result<FusionScore> {
    let conv = |r: Option<i64>| -> Result<Rank> {
        match r {
            None => Ok(Rank::NotFound),
            Some(r) if r >= 1 && r <= i64::from(u32::MAX) => Ok(Rank::Found(r as u32)),
            Some(r) => Err(Error::InvalidRank(r)),
        }
    };
    Ok(fusion_metric(conv(r_s)?, conv(r_d)?))
}

/// Indices of `values` from best to worst. Ties keep generation order.
pub fn rank_candidates(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Population variance of the fusion values of one problem's candidates.
pub fn difficulty_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// DICE coefficient over unique tokens; two empty sets score 0.
pub fn dice_overlap<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: BTreeSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: BTreeSet<&str> = b.iter().map(AsRef::as_ref).collect();
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

/// Kendall's τ-b between two score vectors over the same items.
/// `None` when either vector is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let (mut concordant, mut discordant, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i8;
            let dy = y[i].total_cmp(&y[j]) as i8;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tie_x += 1,
                (_, 0) => tie_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + tie_x) as f64;
    let n1 = (concordant + discordant + tie_y) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (n0 * n1).sqrt())
}

/// One decoded candidate with its retrieval outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    /// Model token ids, ending in EOS when the decoder emitted it.
    #[serde(default)]
    pub tokens: Vec<usize>,
    #[serde(default)]
    pub r_s: Option<u32>,
    #[serde(default)]
    pub r_d: Option<u32>,
    #[serde(default)]
    pub m: Option<f64>,
}

impl Candidate {
    pub fn fusion(&self) -> Option<FusionScore> {
        self.m.map(|value| FusionScore {
            r_s: Rank::from_option(self.r_s),
            r_d: Rank::from_option(self.r_d),
            value,
        })
    }
}

/// A problem's candidates and their order under the fusion metric.
/// `order[0]` is the oracle candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidateSet {
    pub problem_id: String,
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub order: Vec<usize>,
}

impl RankedCandidateSet {
    /// Fills in ranks and the fusion value of every candidate, then orders them.
    pub fn rank(problem_id: String, mut candidates: Vec<Candidate>, scores: &[FusionScore]) -> Self {
        assert_eq!(candidates.len(), scores.len());
        for (c, s) in candidates.iter_mut().zip(scores) {
            c.r_s = s.r_s.position();
            c.r_d = s.r_d.position();
            c.m = Some(s.value);
        }
        let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
        Self {
            problem_id,
            candidates,
            order: rank_candidates(&values),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.m.unwrap_or(0.0)).collect()
    }

    pub fn oracle(&self) -> Option<&Candidate> {
        self.order.first().map(|&i| &self.candidates[i])
    }

    pub fn worst(&self) -> Option<&Candidate> {
        self.order.last().map(|&i| &self.candidates[i])
    }

    /// Candidates in fusion order, best first.
    pub fn ordered(&self) -> impl Iterator<Item = &Candidate> {
        self.order.iter().map(|&i| &self.candidates[i])
    }

    pub fn difficulty(&self) -> f64 {
        difficulty_score(&self.values())
    }
}

/// Mean DICE and mean cosine between reformulations and their gold passages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub epoch: usize,
    pub mean_dice: f64,
    pub mean_cosine: f64,
    /// Problems dropped because their gold passage was unavailable.
    pub skipped: usize,
}

pub fn write_alignment_csv(path: &std::path::Path, points: &[AlignmentPoint]) -> Result<()> {
    let mut out = String::from("epoch,mean_dice,mean_cosine\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.epoch, p.mean_dice, p.mean_cosine));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Least-squares slope of `ys` against `0..n`.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        num += dx * (y - my);
        den += dx * dx;
    }
    num / den
}
