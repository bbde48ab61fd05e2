//! Top-k ranking metrics and the strong-generalization evaluation loop.
//!
//! Each evaluation user contributes a fold-in row (revealed to the model)
//! and a holdout row (the ground truth). Fold-in items are never ranked.
//! Ties in score are broken by ascending item index.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::sparse::InteractionMatrix;

/// Metric monitored for early stopping and model selection.
pub const SELECTION_METRIC: (Metric, usize) = (Metric::Ndcg, 100);

/// Users scored per block, bounding the dense score buffer.
const USER_BLOCK: usize = 1024;

/// Anything that maps fold-in rows to item scores.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;

    /// Raw predicted scores, one row per fold-in user.
    fn score_users(&self, fold_in: &InteractionMatrix) -> Result<DenseMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn key(self, k: usize) -> String {
        match self {
            Metric::Recall => format!("recall@{k}"),
            Metric::Ndcg => format!("ndcg@{k}"),
        }
    }
}

#[inline]
fn rank_order(scores: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    }
}

/// The `k` best items by score, excluding `exclude` (sorted item indices).
pub fn top_k(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let cmp = rank_order(scores);
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(&cmp);
    candidates
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k", "cutoff must be at least 1"));
    }
    Ok(())
}

fn check_alignment(ranked: &[Vec<u32>], holdout: &InteractionMatrix) -> Result<()> {
    if ranked.len() != holdout.n_users() {
        return Err(Error::Shape(format!(
            "{} rankings for {} holdout rows",
            ranked.len(),
            holdout.n_users()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Evaluation("every holdout row is empty".into()));
    }
    Ok(())
}

fn hits<'a>(
    ranking: &'a [u32],
    holdout: &'a [u32],
    k: usize,
) -> impl Iterator<Item = (usize, bool)> + 'a {
    ranking
        .iter()
        .take(k)
        .enumerate()
        .map(move |(r, i)| (r, holdout.binary_search(i).is_ok()))
}

/// |top-k ∩ holdout| / min(k, |holdout|) per user; `None` for users with an
/// empty holdout.
pub fn recall_at_k(
    ranked: &[Vec<u32>],
    holdout: &InteractionMatrix,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    check_k(k)?;
    check_alignment(ranked, holdout)?;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(u, ranking)| {
            let h = holdout.row(u);
            if h.is_empty() {
                return None;
            }
            let found = hits(ranking, h, k).filter(|&(_, hit)| hit).count();
            Some(found as f64 / k.min(h.len()) as f64)
        })
        .collect())
}

/// Truncated NDCG with binary relevance, normalized by the ideal ordering.
pub fn ndcg_at_k(
    ranked: &[Vec<u32>],
    holdout: &InteractionMatrix,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    check_k(k)?;
    check_alignment(ranked, holdout)?;
    let discount: Vec<f64> = (0..k).map(|r| 1.0 / ((r + 2) as f64).log2()).collect();
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(u, ranking)| {
            let h = holdout.row(u);
            if h.is_empty() {
                return None;
            }
            let dcg: f64 = hits(ranking, h, k)
                .filter(|&(_, hit)| hit)
                .map(|(r, _)| discount[r])
                .sum();
            let idcg: f64 = discount[..k.min(h.len())].iter().sum();
            Some(dcg / idcg)
        })
        .collect())
}

/// Aggregate metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user: Option<BTreeMap<String, Vec<f64>>>,
    /// Users that were scored.
    pub n_users: usize,
    /// Users skipped because their holdout was empty.
    #[serde(default)]
    pub n_excluded: usize,
    #[serde(default)]
    pub config_echo: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn metric(&self, metric: Metric, k: usize) -> Option<f64> {
        self.metrics.get(&metric.key(k)).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_inputs(
    n_items: usize,
    fold_in: &InteractionMatrix,
    holdout: &InteractionMatrix,
    ks: &[usize],
) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::param("ks", "need at least one cutoff"));
    }
    for &k in ks {
        check_k(k)?;
    }
    if fold_in.n_users() != holdout.n_users() {
        return Err(Error::Shape(format!(
            "fold-in has {} users, holdout {}",
            fold_in.n_users(),
            holdout.n_users()
        )));
    }
    if fold_in.n_items() != n_items || holdout.n_items() != n_items {
        return Err(Error::Shape(format!(
            "model has {} items, evaluation data {}",
            n_items,
            fold_in.n_items()
        )));
    }
    if holdout.is_empty() {
        return Err(Error::Evaluation("every holdout row is empty".into()));
    }
    Ok(())
}

fn rank_block(
    scores: &DenseMatrix,
    fold_in: &InteractionMatrix,
    k: usize,
) -> Result<Vec<Vec<u32>>> {
    if scores.rows() != fold_in.n_users() || scores.cols() != fold_in.n_items() {
        return Err(Error::Shape(format!(
            "scores are {:?} for {} users × {} items",
            scores.shape(),
            fold_in.n_users(),
            fold_in.n_items()
        )));
    }
    Ok((0..fold_in.n_users())
        .into_par_iter()
        .map(|r| top_k(scores.row(r), fold_in.row(r), k))
        .collect())
}

fn report(
    ranked: &[Vec<u32>],
    holdout: &InteractionMatrix,
    ks: &[usize],
    keep_per_user: bool,
) -> Result<EvalReport> {
    let mut metrics = BTreeMap::new();
    let mut per_user = BTreeMap::new();
    let mut n_users = 0;
    for &k in ks {
        for (metric, values) in [
            (Metric::Recall, recall_at_k(ranked, holdout, k)?),
            (Metric::Ndcg, ndcg_at_k(ranked, holdout, k)?),
        ] {
            let kept: Vec<f64> = values.into_iter().flatten().collect();
            n_users = kept.len();
            metrics.insert(metric.key(k), mean(&kept));
            per_user.insert(metric.key(k), kept);
        }
    }
    Ok(EvalReport {
        metrics,
        per_user: keep_per_user.then_some(per_user),
        n_users,
        n_excluded: holdout.n_users() - n_users,
        config_echo: BTreeMap::new(),
    })
}

/// Ranks items for every fold-in user and scores both metrics at each `k`.
pub fn evaluate(
    model: &dyn Scorer,
    fold_in: &InteractionMatrix,
    holdout: &InteractionMatrix,
    ks: &[usize],
    keep_per_user: bool,
) -> Result<EvalReport> {
    check_inputs(model.n_items(), fold_in, holdout, ks)?;
    let max_k = *ks.iter().max().unwrap();
    let mut ranked: Vec<Vec<u32>> = Vec::with_capacity(fold_in.n_users());
    let users: Vec<usize> = (0..fold_in.n_users()).collect();
    for block in users.chunks(USER_BLOCK) {
        let sub = fold_in.select_rows(block);
        let scores = model.score_users(&sub)?;
        ranked.extend(rank_block(&scores, &sub, max_k)?);
    }
    report(&ranked, holdout, ks, keep_per_user)
}

/// Like [`evaluate`] for a precomputed user×item score matrix, row `u`
/// belonging to fold-in user `u`.
pub fn evaluate_scores(
    scores: &DenseMatrix,
    fold_in: &InteractionMatrix,
    holdout: &InteractionMatrix,
    ks: &[usize],
    keep_per_user: bool,
) -> Result<EvalReport> {
    check_inputs(scores.cols(), fold_in, holdout, ks)?;
    let max_k = *ks.iter().max().unwrap();
    let ranked = rank_block(scores, fold_in, max_k)?;
    report(&ranked, holdout, ks, keep_per_user)
}

/// Validation score used for early stopping: NDCG@100.
pub fn selection_score(
    model: &dyn Scorer,
    fold_in: &InteractionMatrix,
    holdout: &InteractionMatrix,
) -> Result<f64> {
    let (metric, k) = SELECTION_METRIC;
    let report = evaluate(model, fold_in, holdout, &[k], false)?;
    Ok(report.metric(metric, k).unwrap_or(0.0))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holdout(rows: Vec<Vec<u32>>, n_items: usize) -> InteractionMatrix {
        InteractionMatrix::from_rows(n_items, rows).unwrap()
    }

    #[test]
    fn recall_full_and_disjoint() {
        let h = holdout(vec![vec![1, 3], vec![0]], 5);
        let ranked = vec![vec![3, 1, 0], vec![2, 4, 1]];
        let r = recall_at_k(&ranked, &h, 3).unwrap();
        assert_eq!(r, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn recall_boundary_at_k() {
        let h = holdout(vec![vec![4]], 6);
        let ranked = vec![vec![0, 1, 4, 2]];
        assert_eq!(recall_at_k(&ranked, &h, 2).unwrap(), vec![Some(0.0)]);
        assert_eq!(recall_at_k(&ranked, &h, 3).unwrap(), vec![Some(1.0)]);
    }

    #[test]
    fn ndcg_rank_two() {
        let h = holdout(vec![vec![7]], 8);
        let v = ndcg_at_k(&[vec![1, 7, 2]], &h, 3).unwrap()[0].unwrap();
        assert!((v - 0.63093).abs() < 1e-5);
        let v = ndcg_at_k(&[vec![7, 1]], &h, 3).unwrap()[0].unwrap();
        assert_eq!(v, 1.0);
        let h = holdout(vec![vec![1, 7]], 8);
        let v = ndcg_at_k(&[vec![7, 1, 0]], &h, 2).unwrap()[0].unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_holdout_users_are_excluded() {
        let h = holdout(vec![vec![], vec![0]], 3);
        let r = recall_at_k(&[vec![0], vec![0]], &h, 1).unwrap();
        assert_eq!(r, vec![None, Some(1.0)]);
        let all_empty = holdout(vec![vec![], vec![]], 3);
        assert!(matches!(
            recall_at_k(&[vec![0], vec![0]], &all_empty, 1),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn zero_cutoff_is_rejected() {
        let h = holdout(vec![vec![0]], 3);
        assert!(ndcg_at_k(&[vec![0]], &h, 0).is_err());
    }

    #[test]
    fn top_k_masks_and_breaks_ties_by_index() {
        let scores = [0.5, 0.9, 0.5, 0.9, 0.1];
        assert_eq!(top_k(&scores, &[], 3), vec![1, 3, 0]);
        assert_eq!(top_k(&scores, &[1], 3), vec![3, 0, 2]);
        assert_eq!(top_k(&scores, &[0, 1, 2, 3], 3), vec![4]);
    }

    #[test]
    fn perfect_scores_give_perfect_metrics() {
        let fold = holdout(vec![vec![0], vec![2]], 4);
        let hold = holdout(vec![vec![1, 3], vec![0]], 4);
        let scores = hold.to_dense();
        let report = evaluate_scores(&scores, &fold, &hold, &[1, 2], true).unwrap();
        for v in report.metrics.values() {
            assert_eq!(*v, 1.0);
        }
        assert_eq!(report.n_users, 2);
        let per = report.per_user.as_ref().unwrap();
        for (key, values) in per {
            assert!((mean(values) - report.metrics[key]).abs() < 1e-12);
        }
    }
}
