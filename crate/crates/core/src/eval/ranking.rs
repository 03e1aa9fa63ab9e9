use std::cmp::Ordering;

use rayon::prelude::*;

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::models::Ranker;

/// Users scored per call to [`Ranker::score_all_items`].
const USER_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub k: usize,
    /// Percentage of users whose held-out item ranks within the top `k`.
    pub hr_at_k: f64,
    /// Mean `1 / log2(rank + 1)` over users (0 beyond `k`), as a percentage.
    pub ndcg_at_k: f64,
    /// Recall@k from an explicit top-k list; equals `hr_at_k` here.
    pub recall_at_k: f64,
    pub users: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserRank {
    pub user: usize,
    pub item: usize,
    /// 1-based.
    pub rank: usize,
}

/// 1-based rank of `target` among candidates, i.e. every item except those
/// in `excluded` (sorted). A candidate ranks ahead when it scores higher, or
/// scores equal and has a smaller id.
pub fn rank_of(scores: &[f64], target: usize, excluded: &[usize]) -> usize {
    let st = scores[target];
    let mut ahead = 0;
    for (j, &s) in scores.iter().enumerate() {
        if j != target && (s > st || (s == st && j < target)) && excluded.binary_search(&j).is_err() {
            ahead += 1;
        }
    }
    ahead + 1
}

/// Fraction of `targets` in the top `k` candidates by (score desc, id asc).
pub fn recall_at_k(scores: &[f64], targets: &[usize], excluded: &[usize], k: usize) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|j| excluded.binary_search(j).is_err() || targets.contains(j))
        .collect();
    candidates.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = &candidates[..k.min(candidates.len())];
    targets.iter().filter(|t| top.contains(t)).count() as f64 / targets.len() as f64
}

/// Full-vocabulary leave-one-out ranking of every test item. Items the user
/// has seen in train are excluded, except the test item itself.
pub fn evaluate_ranking<R: Ranker>(model: &R, dataset: &InteractionDataset, k: usize) -> Result<RankingReport> {
    evaluate_ranking_on(model, dataset, &dataset.test, k).map(|(report, _)| report)
}

/// As [`evaluate_ranking`] on arbitrary `(user, item)` pairs, also returning
/// every user's rank.
pub fn evaluate_ranking_on<R: Ranker>(
    model: &R,
    dataset: &InteractionDataset,
    pairs: &[(usize, usize)],
    k: usize,
) -> Result<(RankingReport, Vec<UserRank>)> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen);
    }
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let seen = dataset.user_train_items();
    let per_chunk: Vec<Result<Vec<(UserRank, bool)>>> = pairs
        .par_chunks(USER_CHUNK)
        .map(|chunk| {
            let users: Vec<usize> = chunk.iter().map(|&(u, _)| u).collect();
            let scores = model.score_all_items(&users)?;
            Ok(chunk
                .iter()
                .zip(scores.outer_iter())
                .map(|(&(user, item), row)| {
                    let row = row.as_slice().expect("contiguous");
                    let excluded: Vec<usize> = seen[user].iter().copied().filter(|&j| j != item).collect();
                    let rank = rank_of(row, item, &excluded);
                    let recalled = recall_at_k(row, &[item], &excluded, k) == 1.0;
                    (UserRank { user, item, rank }, recalled)
                })
                .collect())
        })
        .collect();
    let mut ranks = Vec::with_capacity(pairs.len());
    let mut recalled = 0usize;
    for chunk in per_chunk {
        for (r, hit) in chunk? {
            ranks.push(r);
            recalled += usize::from(hit);
        }
    }
    Ok((report_from_ranks(&ranks, recalled, k), ranks))
}

fn report_from_ranks(ranks: &[UserRank], recalled: usize, k: usize) -> RankingReport {
    let users = ranks.len();
    let denom = users.max(1) as f64;
    let hits = ranks.iter().filter(|r| r.rank <= k).count();
    // Summed in user order, so the result does not depend on scheduling.
    let ndcg: f64 = ranks
        .iter()
        .filter(|r| r.rank <= k)
        .map(|r| 1.0 / ((r.rank + 1) as f64).log2())
        .sum();
    RankingReport {
        k,
        hr_at_k: 100.0 * hits as f64 / denom,
        ndcg_at_k: 100.0 * ndcg / denom,
        recall_at_k: 100.0 * recalled as f64 / denom,
        users,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(rank: usize, k: usize) -> RankingReport {
        report_from_ranks(&[UserRank { user: 0, item: 0, rank }], usize::from(rank <= k), k)
    }

    #[test]
    fn rank_one_scores_full_credit() {
        let r = single(1, 10);
        assert_eq!((r.hr_at_k, r.ndcg_at_k), (100.0, 100.0));
    }

    #[test]
    fn rank_three_ndcg_is_half() {
        assert_eq!(single(3, 10).ndcg_at_k, 50.0);
    }

    #[test]
    fn rank_past_k_scores_nothing() {
        let r = single(11, 10);
        assert_eq!((r.hr_at_k, r.ndcg_at_k), (0.0, 0.0));
    }

    #[test]
    fn ties_rank_smaller_ids_first() {
        let scores = [0.5, 0.9, 0.5, 0.5, 0.1];
        assert_eq!(rank_of(&scores, 0, &[]), 2);
        assert_eq!(rank_of(&scores, 3, &[]), 4);
        assert_eq!(rank_of(&scores, 3, &[1, 2]), 2);
        assert_eq!(rank_of(&scores, 4, &[]), 5);
    }

    proptest! {
        #[test]
        fn recall_equals_hit_rate(
            scores in prop::collection::vec(-3i32..3, 2..40),
            target_pick in 0usize..1000,
            exclude_mask in prop::collection::vec(any::<bool>(), 40),
            k in 1usize..12,
        ) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let target = target_pick % scores.len();
            let excluded: Vec<usize> = (0..scores.len()).filter(|&j| j != target && exclude_mask[j]).collect();
            let rank = rank_of(&scores, target, &excluded);
            prop_assert_eq!(rank <= k, recall_at_k(&scores, &[target], &excluded, k) == 1.0);
        }

        #[test]
        fn better_rank_never_lowers_ndcg(a in 1usize..30, b in 1usize..30) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(single(lo, 10).ndcg_at_k >= single(hi, 10).ndcg_at_k);
            prop_assert!(single(lo, 10).ndcg_at_k <= single(lo, 10).hr_at_k);
        }
    }
}
