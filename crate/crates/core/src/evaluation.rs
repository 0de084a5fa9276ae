//! All-ranking top-K evaluation: every item the user has not interacted with
//! in training is a candidate.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::log2;
use crate::model::EmbeddingState;
use crate::{InteractionDataset, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalSplit {
    /// Held-out train items; train items are masked.
    Validation,
    /// Test items; train and validation items are masked.
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k: usize,
    /// Macro-average over evaluated users.
    pub recall: f64,
    pub ndcg: f64,
    pub num_evaluated_users: usize,
    /// Users with an empty target set; they do not enter the averages.
    pub num_skipped_users: usize,
    pub per_user: Vec<UserMetrics>,
}

/// Indices of the `k` best finite scores, descending by score with ties
/// broken by ascending index. `-inf` entries are never returned.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] != f64::NEG_INFINITY)
        .collect();
    let cmp = |a: &usize, b: &usize| -> Ordering {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

/// `|top-k ∩ relevant| / |relevant|`; `relevant` must be sorted. Returns 0
/// for an empty relevant set.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with the ideal DCG truncated at
/// `min(|relevant|, k)`; `relevant` must be sorted.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(r, _)| discount(r))
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(discount).sum();
    dcg / idcg
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / log2(rank as f64 + 2.0)
}

fn evaluate_user(
    state: &EmbeddingState,
    ds: &InteractionDataset,
    split: EvalSplit,
    k: usize,
    user: usize,
) -> Result<Option<UserMetrics>> {
    let relevant = match split {
        EvalSplit::Validation => ds.validation(user),
        EvalSplit::Test => ds.test(user),
    };
    if relevant.is_empty() {
        return Ok(None);
    }
    let mut scores = state.score_all_items(user, ds.train(user))?;
    if split == EvalSplit::Test {
        for &i in ds.validation(user) {
            scores[i] = f64::NEG_INFINITY;
        }
    }
    let ranked = top_k(&scores, k);
    Ok(Some(UserMetrics {
        user,
        recall: recall_at_k(&ranked, relevant, k),
        ndcg: ndcg_at_k(&ranked, relevant, k),
    }))
}

/// Ranked top-`k` items for `user` with the masking `split` implies.
pub fn recommend(
    state: &EmbeddingState,
    ds: &InteractionDataset,
    split: EvalSplit,
    user: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let mut scores = state.score_all_items(user, ds.train(user))?;
    if split == EvalSplit::Test {
        for &i in ds.validation(user) {
            scores[i] = f64::NEG_INFINITY;
        }
    }
    Ok(top_k(&scores, k))
}

/// Scores every user with a nonempty target set and macro-averages recall and
/// NDCG at `k`. Requires a fresh forward pass on `state`.
pub fn evaluate_all_ranking(
    state: &EmbeddingState,
    ds: &InteractionDataset,
    split: EvalSplit,
    k: usize,
) -> Result<EvalReport> {
    state.combined()?;
    #[cfg(feature = "parallel")]
    let rows: Vec<Option<UserMetrics>> = {
        use rayon::prelude::*;
        (0..ds.num_users())
            .into_par_iter()
            .map(|u| evaluate_user(state, ds, split, k, u))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Option<UserMetrics>> = (0..ds.num_users())
        .map(|u| evaluate_user(state, ds, split, k, u))
        .collect::<Result<_>>()?;

    let per_user: Vec<UserMetrics> = rows.into_iter().flatten().collect();
    let n = per_user.len();
    // Sequential sums keep the result independent of thread count.
    let (recall, ndcg) = if n == 0 {
        (0.0, 0.0)
    } else {
        let r: f64 = per_user.iter().map(|m| m.recall).sum();
        let g: f64 = per_user.iter().map(|m| m.ndcg).sum();
        (r / n as f64, g / n as f64)
    };
    Ok(EvalReport {
        k,
        recall,
        ndcg,
        num_evaluated_users: n,
        num_skipped_users: ds.num_users() - n,
        per_user,
    })
}
