//! Engagement-rate ground truth, graded relevance, NDCG@K, and RBP.
//!
//! Relevance is bucketed 0..5 from engagement rates by fixed thresholds; NDCG
//! uses exponential gain (2^rel - 1) with log2(rank+1) discount; RBP takes raw
//! engagement rates as gains with persistence p.

use crate::error::{Error, Result};

/// Mean likes per post over a window, divided by the follower count for that
/// window. Zero posts map to 0 by convention.
pub fn engagement_rate(likes: &[u64], followers: f64) -> Result<f64> {
    if !(followers > 0.0) {
        return Err(Error::Data(format!("follower count must be positive, got {followers}")));
    }
    if likes.is_empty() {
        return Ok(0.0);
    }
    let mean = likes.iter().map(|&l| l as f64).sum::<f64>() / likes.len() as f64;
    Ok(mean / followers)
}

/// Graded relevance from an engagement rate. Thresholds:
/// 5: e >= 0.10 | 4: 0.07.. | 3: 0.05.. | 2: 0.03.. | 1: 0.01.. | 0: below.
pub fn relevance_level(e: f64) -> u8 {
    debug_assert!(e >= 0.0, "engagement rate must be non-negative");
    if e >= 0.10 {
        5
    } else if e >= 0.07 {
        4
    } else if e >= 0.05 {
        3
    } else if e >= 0.03 {
        2
    } else if e >= 0.01 {
        1
    } else {
        0
    }
}

fn dcg_at_k(relevances: &[u8], k: usize) -> f64 {
    relevances
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `ranked` (relevances in predicted order) against `ideal`
/// (relevances in best order). An all-zero ideal prefix is defined as 1.
pub fn ndcg_at_k(ranked: &[u8], ideal: &[u8], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let idcg = dcg_at_k(ideal, k);
    if idcg == 0.0 {
        return 1.0;
    }
    dcg_at_k(ranked, k) / idcg
}

/// Rank-biased precision: (1-p) * sum_{i=1..depth} gain_i * p^(i-1).
pub fn rbp(gains: &[f64], p: f64, depth: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("rbp persistence must be in (0,1), got {p}")));
    }
    let mut acc = 0.0;
    let mut weight = 1.0;
    for &g in gains.iter().take(depth) {
        acc += g * weight;
        weight *= p;
    }
    Ok((1.0 - p) * acc)
}

/// A scored ranking with its ground truth, sorted by descending score with
/// ascending-index ties so equal scores are deterministic.
#[derive(Clone, Debug)]
pub struct RankedList {
    /// Influencer ids in rank order.
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub rates: Vec<f64>,
    pub relevances: Vec<u8>,
}

impl RankedList {
    pub fn from_scores(ids: &[String], scores: &[f64], rates: &[f64]) -> Self {
        assert_eq!(ids.len(), scores.len());
        assert_eq!(ids.len(), rates.len());
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(ids[a].cmp(&ids[b]))
        });
        RankedList {
            ids: order.iter().map(|&i| ids[i].clone()).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
            rates: order.iter().map(|&i| rates[i]).collect(),
            relevances: order.iter().map(|&i| relevance_level(rates[i])).collect(),
        }
    }

    /// Relevances of the same items in ideal (best-first) order.
    pub fn ideal_relevances(&self) -> Vec<u8> {
        let mut ideal = self.relevances.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        ideal
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        ndcg_at_k(&self.relevances, &self.ideal_relevances(), k)
    }

    /// RBP over the full ranking with engagement rates as gains.
    pub fn rbp(&self, p: f64) -> Result<f64> {
        rbp(&self.rates, p, self.rates.len())
    }
}

/// Follower strata from the follower-size analysis: micro below 20k, mid up
/// to 100k, macro above.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stratum {
    Micro,
    Mid,
    Macro,
}

impl Stratum {
    pub fn of(followers: f64) -> Self {
        if followers < 2e4 {
            Stratum::Micro
        } else if followers <= 1e5 {
            Stratum::Mid
        } else {
            Stratum::Macro
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stratum::Micro => "micro",
            Stratum::Mid => "mid",
            Stratum::Macro => "macro",
        }
    }
}
