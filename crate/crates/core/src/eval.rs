//! Leave-one-out ranking metrics: HR@K and NDCG@K for one held-out positive
//! ranked against sampled negatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CUTOFF: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RankingCase {
    pub scores: Vec<f64>,
    pub positive_position: usize,
}

impl RankingCase {
    /// Scores laid out as `[positive, negatives...]`.
    pub fn positive_first(scores: Vec<f64>) -> Self {
        RankingCase {
            scores,
            positive_position: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub n_users: usize,
}

/// 1-based rank of the positive under descending score. Ties count against
/// the positive: it lands after every candidate with an equal score.
pub fn rank_position(case: &RankingCase) -> Result<usize> {
    if case.positive_position >= case.scores.len() {
        return Err(Error::InvalidParam(format!(
            "positive position {} out of {} candidates",
            case.positive_position,
            case.scores.len()
        )));
    }
    if !case.scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("ranking score"));
    }
    let pos = case.scores[case.positive_position];
    let ahead = case
        .scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| i != case.positive_position && s >= pos)
        .count();
    Ok(ahead + 1)
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Means of the per-case metrics, summed in case order.
pub fn evaluate_population(cases: &[RankingCase], k: usize) -> Result<MetricSummary> {
    let ranks = cases.iter().map(rank_position).collect::<Result<Vec<_>>>()?;
    summarize_ranks(&ranks, k)
}

pub fn summarize_ranks(ranks: &[usize], k: usize) -> Result<MetricSummary> {
    if ranks.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = ranks.len() as f64;
    let (hr, ndcg) = ranks.iter().fold((0.0, 0.0), |(h, g), &r| {
        (h + hr_at_k(r, k), g + ndcg_at_k(r, k))
    });
    Ok(MetricSummary {
        hr_at_k: hr / n,
        ndcg_at_k: ndcg / n,
        k,
        n_users: ranks.len(),
    })
}
