//! Pool selection: ranking by validation performance, expert-area scoring,
//! pairwise diversity and the pre-cut rule.
//!
//! Selection works on pool indices. The caller supplies the performance
//! matrix and each classifier's validation predictions; [`select_from_pool`]
//! derives both from a [`TrainedPool`].

use crate::classifier::{ClassifierError, PerformanceMatrix, TrainedPool};
use crate::parallel::{map_indices, try_map_indices, Execution};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_VA_MAX: f64 = 10.0;
pub const DEFAULT_VA_MIN: f64 = 1.0;

// Softmax outputs within this distance of the column maximum count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("cannot choose {ensemble} of {pool} classifiers")]
    InvalidSizes { pool: usize, ensemble: usize },
    #[error("performance matrix is empty")]
    EmptyMatrix,
    #[error("prediction vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("pool of {available} is too small, need {needed}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("invalid expert values: va_max={va_max}, va_min={va_min}")]
    InvalidExpertValues { va_max: f64, va_min: f64 },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// One row of the selection grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default)]
    pub exp: bool,
    #[serde(default)]
    pub div: bool,
    /// Diversity counts samples where at least one classifier is wrong,
    /// instead of both.
    #[serde(default)]
    pub ver: bool,
    /// Pre-cut the ranked pool to `ensemble_size + 1` before diversity.
    #[serde(default)]
    pub pc: bool,
    pub ensemble_size: usize,
}

impl SelectionConfig {
    pub fn new(exp: bool, div: bool, ver: bool, pc: bool, ensemble_size: usize) -> Result<Self, SelectionError> {
        let cfg = Self { exp, div, ver, pc, ensemble_size };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Performance ranking only.
    pub fn baseline(ensemble_size: usize) -> Self {
        Self { exp: false, div: false, ver: false, pc: false, ensemble_size }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.ensemble_size < 2 {
            return Err(SelectionError::InvalidConfig(format!(
                "ensemble_size must be at least 2, got {}",
                self.ensemble_size
            )));
        }
        if !self.div && (self.ver || self.pc) {
            return Err(SelectionError::InvalidConfig("ver and pc require div".into()));
        }
        Ok(())
    }

    /// Flags as `(exp, div, ver, pc)`.
    pub fn flags(&self) -> (bool, bool, bool, bool) {
        (self.exp, self.div, self.ver, self.pc)
    }
}

/// Binomial coefficient `n_pool` choose `n_ensemble`.
pub fn combination_count(n_pool: usize, n_ensemble: usize) -> Result<u128, SelectionError> {
    if n_ensemble == 0 || n_ensemble > n_pool {
        return Err(SelectionError::InvalidSizes { pool: n_pool, ensemble: n_ensemble });
    }
    let k = n_ensemble.min(n_pool - n_ensemble) as u128;
    let n = n_pool as u128;
    // Each partial product is itself a binomial coefficient, so the
    // division is exact.
    Ok((0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1)))
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Expertness of each classifier; sums to 1.
///
/// Each class column is softmaxed over classifiers, the column maximizers
/// share `va_max` and every other entry gets `va_min`, the masked values are
/// summed per classifier and the sums are softmaxed.
pub fn expert_scores(perf: &PerformanceMatrix, va_max: f64, va_min: f64) -> Result<Vec<f64>, SelectionError> {
    if !(va_max > 0.0 && va_min >= 0.0 && va_max.is_finite() && va_max > va_min) {
        return Err(SelectionError::InvalidExpertValues { va_max, va_min });
    }
    let (m, n) = (perf.n_classifiers(), perf.n_classes());
    if m == 0 || n == 0 {
        return Err(SelectionError::EmptyMatrix);
    }
    let mut sums = vec![0.0; m];
    for class in 0..n {
        let column: Vec<f64> = (0..m).map(|i| perf.get(i, class)).collect();
        let soft = softmax(&column);
        let top = soft.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<bool> = soft.iter().map(|&s| top - s <= TIE_TOLERANCE).collect();
        let share = va_max / winners.iter().filter(|&&w| w).count() as f64;
        for (sum, w) in sums.iter_mut().zip(winners) {
            *sum += if w { share } else { va_min };
        }
    }
    Ok(softmax(&sums))
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<(), SelectionError> {
    if a.len() != b.len() {
        return Err(SelectionError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Fraction of samples where both classifiers are wrong, or with `ver`,
/// where at least one is.
pub fn pairwise_diversity(pred_i: &[usize], pred_j: &[usize], truth: &[usize], ver: bool) -> Result<f64, SelectionError> {
    check_lengths(pred_i, truth)?;
    check_lengths(pred_j, truth)?;
    if truth.is_empty() {
        return Err(SelectionError::LengthMismatch(0, 0));
    }
    let hits = pred_i
        .iter()
        .zip(pred_j)
        .zip(truth)
        .filter(|((&a, &b), &t)| {
            let (wa, wb) = (a != t, b != t);
            if ver {
                wa || wb
            } else {
                wa && wb
            }
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Symmetric; the diagonal is zero and unused.
    pub pairwise: Vec<Vec<f64>>,
    /// Sum over ordered pairs `i != j`, divided by the number of classifiers.
    pub ensemble_value: f64,
}

fn diversity_matrix(predictions: &[Vec<usize>], truth: &[usize], ver: bool, exec: Execution) -> Result<Vec<Vec<f64>>, SelectionError> {
    let k = predictions.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let values = try_map_indices(pairs.len(), exec, |p| {
        let (i, j) = pairs[p];
        pairwise_diversity(&predictions[i], &predictions[j], truth, ver)
    })?;
    let mut matrix = vec![vec![0.0; k]; k];
    for (&(i, j), v) in pairs.iter().zip(values) {
        matrix[i][j] = v;
        matrix[j][i] = v;
    }
    Ok(matrix)
}

fn ensemble_value(matrix: &[Vec<f64>], members: &[usize]) -> f64 {
    let total: f64 = members
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| members[a + 1..].iter().map(move |&j| matrix[i][j]))
        .sum();
    2.0 * total / members.len() as f64
}

pub fn ensemble_diversity(
    predictions: &[Vec<usize>],
    truth: &[usize],
    ver: bool,
    exec: Execution,
) -> Result<DiversityReport, SelectionError> {
    if predictions.len() < 2 {
        return Err(SelectionError::PoolTooSmall { needed: 2, available: predictions.len() });
    }
    let pairwise = diversity_matrix(predictions, truth, ver, exec)?;
    let all: Vec<usize> = (0..predictions.len()).collect();
    Ok(DiversityReport { ensemble_value: ensemble_value(&pairwise, &all), pairwise })
}

/// Keeps the first `ensemble_size + 1` entries of a ranking.
pub fn apply_precut<T: Clone>(ranked: &[T], ensemble_size: usize) -> Result<Vec<T>, SelectionError> {
    let keep = ensemble_size + 1;
    if ranked.len() < keep {
        return Err(SelectionError::PoolTooSmall { needed: keep, available: ranked.len() });
    }
    Ok(ranked[..keep].to_vec())
}

/// Pool indices sorted by descending score, ties by lower index.
fn rank_by(scores: &[f64], order: &[usize]) -> Vec<usize> {
    let mut ranked = order.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub config: SelectionConfig,
    /// Chosen pool indices in selection order.
    pub selected: Vec<usize>,
    /// Candidate ranking the final step chose from.
    pub ranking: Vec<usize>,
    pub mean_f1: Vec<f64>,
    pub expert: Option<Vec<f64>>,
    /// Ensemble diversity of the chosen set, when diversity was used.
    pub diversity: Option<f64>,
}

/// Chooses `cfg.ensemble_size` classifiers.
///
/// `predictions[i]` holds classifier `i`'s validation predictions against
/// `truth`. Greedy diversity starts from the most diverse pair and then adds
/// whichever candidate maximizes the ensemble value; ties go to the earlier
/// candidate in the current ranking.
pub fn select_pool(
    perf: &PerformanceMatrix,
    predictions: &[Vec<usize>],
    truth: &[usize],
    cfg: &SelectionConfig,
    exec: Execution,
) -> Result<Selection, SelectionError> {
    cfg.validate()?;
    let m = perf.n_classifiers();
    if m == 0 {
        return Err(SelectionError::EmptyMatrix);
    }
    if predictions.len() != m {
        return Err(SelectionError::LengthMismatch(predictions.len(), m));
    }
    let needed = cfg.ensemble_size + usize::from(cfg.pc);
    if m < needed {
        return Err(SelectionError::PoolTooSmall { needed, available: m });
    }

    let mean_f1: Vec<f64> = (0..m).map(|i| perf.mean(i)).collect();
    let mut ranking = rank_by(&mean_f1, &(0..m).collect::<Vec<_>>());
    let expert = if cfg.exp {
        let scores = expert_scores(perf, DEFAULT_VA_MAX, DEFAULT_VA_MIN)?;
        ranking = rank_by(&scores, &ranking);
        Some(scores)
    } else {
        None
    };
    if cfg.pc {
        ranking = apply_precut(&ranking, cfg.ensemble_size)?;
    }

    let (selected, diversity) = if cfg.div {
        let candidates: Vec<Vec<usize>> = ranking.iter().map(|&i| predictions[i].clone()).collect();
        let matrix = diversity_matrix(&candidates, truth, cfg.ver, exec)?;
        let chosen = greedy_diverse(&matrix, cfg.ensemble_size);
        let value = ensemble_value(&matrix, &chosen);
        (chosen.into_iter().map(|c| ranking[c]).collect(), Some(value))
    } else {
        (ranking[..cfg.ensemble_size].to_vec(), None)
    };
    Ok(Selection { config: *cfg, selected, ranking, mean_f1, expert, diversity })
}

// Positions into the candidate ranking.
fn greedy_diverse(matrix: &[Vec<f64>], size: usize) -> Vec<usize> {
    let k = matrix.len();
    let mut best = (0, 1);
    for i in 0..k {
        for j in i + 1..k {
            if matrix[i][j] > matrix[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    let mut chosen = vec![best.0, best.1];
    while chosen.len() < size {
        let mut pick: Option<(usize, f64)> = None;
        for c in (0..k).filter(|c| !chosen.contains(c)) {
            let mut trial = chosen.clone();
            trial.push(c);
            let v = ensemble_value(matrix, &trial);
            if pick.is_none_or(|(_, pv)| v > pv) {
                pick = Some((c, v));
            }
        }
        chosen.push(pick.expect("pool larger than ensemble").0);
    }
    chosen
}

/// Computes validation predictions for every pool member, then selects.
pub fn select_from_pool(
    pool: &TrainedPool,
    x_va: ArrayView2<'_, f64>,
    y_va: &[usize],
    cfg: &SelectionConfig,
    exec: Execution,
) -> Result<Selection, SelectionError> {
    let predictions = validation_predictions(pool, x_va, exec)?;
    select_pool(&pool.performance, &predictions, y_va, cfg, exec)
}

pub fn validation_predictions(
    pool: &TrainedPool,
    x_va: ArrayView2<'_, f64>,
    exec: Execution,
) -> Result<Vec<Vec<usize>>, ClassifierError> {
    let rows: Vec<Vec<f64>> = x_va.outer_iter().map(|r| r.to_vec()).collect();
    pool.classifiers
        .iter()
        .map(|c| map_indices(rows.len(), exec, |i| c.predict_row(&rows[i])).into_iter().collect())
        .collect()
}

/// The ten flag combinations `(exp, div, ver, pc)`, rows `Co1` to `Co10`.
pub const GRID_FLAGS: [(bool, bool, bool, bool); 10] = [
    (false, false, false, false),
    (false, true, false, false),
    (false, true, false, true),
    (false, true, true, false),
    (false, true, true, true),
    (true, false, false, false),
    (true, true, false, false),
    (true, true, false, true),
    (true, true, true, false),
    (true, true, true, true),
];

pub fn selection_grid(ensemble_size: usize) -> Vec<SelectionConfig> {
    GRID_FLAGS
        .iter()
        .map(|&(exp, div, ver, pc)| SelectionConfig { exp, div, ver, pc, ensemble_size })
        .collect()
}

/// Row name for grid position `index` (0-based), e.g. `Co1`.
pub fn grid_row_name(index: usize) -> String {
    format!("Co{}", index + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn perf(rows: Vec<Vec<f64>>) -> PerformanceMatrix {
        PerformanceMatrix::new(rows).unwrap()
    }

    fn pascal(n: usize, k: usize) -> u128 {
        let mut row = vec![1u128];
        for _ in 0..n {
            let mut next = vec![1u128; row.len() + 1];
            for i in 1..row.len() {
                next[i] = row[i - 1] + row[i];
            }
            row = next;
        }
        row[k]
    }

    #[test]
    fn combination_counts() {
        assert_eq!(combination_count(5, 3).unwrap(), 10);
        assert_eq!(combination_count(10, 5).unwrap(), 252);
        assert_eq!(combination_count(7, 7).unwrap(), 1);
        assert!(combination_count(3, 0).is_err());
        assert!(combination_count(3, 4).is_err());
        for n in 1..=20 {
            for k in 1..=n {
                assert_eq!(combination_count(n, k).unwrap(), pascal(n, k), "C({n},{k})");
            }
        }
    }

    #[test]
    fn expert_symmetric() {
        let s = expert_scores(&perf(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 10.0, 1.0).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expert_dominant() {
        let s = expert_scores(&perf(vec![vec![1.0, 1.0], vec![0.0, 0.0]]), 10.0, 1.0).unwrap();
        let low = 1.0 / (1.0 + 18f64.exp());
        assert!((s[1] - low).abs() < 1e-15);
        assert!((s[0] - (1.0 - low)).abs() < 1e-12);
        assert!(s[1] > 1.5e-8 && s[1] < 1.6e-8);
    }

    #[test]
    fn expert_ties_split() {
        // Class 0 is tied across three classifiers, class 1 is won by #2.
        let s = expert_scores(&perf(vec![vec![0.7, 0.1], vec![0.7, 0.2], vec![0.7, 0.9]]), 9.0, 1.0).unwrap();
        let sums: [f64; 3] = [3.0 + 1.0, 3.0 + 1.0, 3.0 + 9.0];
        let oracle = softmax(&sums);
        for (a, b) in s.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(expert_scores(&perf(vec![vec![0.5]]), 1.0, 2.0).is_err());
    }

    #[test]
    fn diversity_hand_case() {
        let truth = [0, 0, 0, 0];
        let pi = [1, 0, 0, 0];
        let pj = [0, 1, 0, 0];
        assert_eq!(pairwise_diversity(&pi, &pj, &truth, false).unwrap(), 0.0);
        assert_eq!(pairwise_diversity(&pi, &pj, &truth, true).unwrap(), 0.5);
        assert_eq!(pairwise_diversity(&truth, &truth, &truth, true).unwrap(), 0.0);
        assert_eq!(pairwise_diversity(&[1, 1], &[2, 2], &[0, 0], false).unwrap(), 1.0);
        let r = ensemble_diversity(&[pi.to_vec(), pj.to_vec()], &truth, true, Execution::Sequential).unwrap();
        assert_eq!(r.ensemble_value, 0.5);
        assert_eq!(r.pairwise, vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert!(pairwise_diversity(&[0], &[0, 1], &[0, 1], true).is_err());
    }

    #[test]
    fn precut() {
        let ranked: Vec<usize> = (0..10).collect();
        assert_eq!(apply_precut(&ranked, 5).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(apply_precut(&ranked, 9).unwrap(), ranked);
        assert!(matches!(apply_precut(&ranked, 10), Err(SelectionError::PoolTooSmall { .. })));
    }

    #[test]
    fn grid_rows() {
        let g = selection_grid(3);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0].flags(), (false, false, false, false));
        assert_eq!(g[9].flags(), (true, true, true, true));
        assert!(g.iter().all(|c| c.validate().is_ok()));
        assert_eq!(grid_row_name(9), "Co10");
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::new(false, false, true, false, 3).is_err());
        assert!(SelectionConfig::new(false, false, false, true, 3).is_err());
        assert!(SelectionConfig::new(true, false, false, false, 1).is_err());
        let parsed: SelectionConfig = serde_json::from_str(r#"{"div": true, "ensemble_size": 3}"#).unwrap();
        assert_eq!(parsed.flags(), (false, true, false, false));
    }

    fn toy() -> (PerformanceMatrix, Vec<Vec<usize>>, Vec<usize>) {
        let truth = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let predictions = vec![
            vec![0, 1, 0, 1, 0, 1, 0, 0],
            vec![0, 1, 0, 1, 0, 1, 1, 1],
            vec![1, 1, 0, 1, 0, 1, 0, 1],
            vec![0, 0, 1, 1, 0, 1, 0, 1],
            vec![0, 1, 0, 0, 1, 0, 0, 1],
        ];
        let rows = predictions.iter().map(|p| crate::metrics::per_class_f1(&truth, p, 2)).collect();
        (perf(rows), predictions, truth)
    }

    #[test]
    fn baseline_takes_top_mean_f1() {
        let (p, preds, truth) = toy();
        let s = select_pool(&p, &preds, &truth, &SelectionConfig::baseline(2), Execution::Sequential).unwrap();
        let mut by_score: Vec<usize> = (0..5).collect();
        by_score.sort_by(|&a, &b| p.mean(b).total_cmp(&p.mean(a)));
        assert_eq!(s.selected, by_score[..2].to_vec());
        assert_eq!(s.diversity, None);
    }

    #[test]
    fn precut_diversity_picks_max_pair_of_top_three() {
        let (p, preds, truth) = toy();
        for ver in [false, true] {
            let cfg = SelectionConfig::new(false, true, ver, true, 2).unwrap();
            let s = select_pool(&p, &preds, &truth, &cfg, Execution::Parallel).unwrap();
            let top3 = &s.ranking;
            assert_eq!(top3.len(), 3);
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for a in 0..3 {
                for b in a + 1..3 {
                    let d = pairwise_diversity(&preds[top3[a]], &preds[top3[b]], &truth, ver).unwrap();
                    if d > best.0 {
                        best = (d, top3[a], top3[b]);
                    }
                }
            }
            assert_eq!(s.selected, vec![best.1, best.2]);
        }
    }

    #[test]
    fn every_grid_row_selects_valid_pool() {
        let (p, preds, truth) = toy();
        for cfg in selection_grid(3) {
            let a = select_pool(&p, &preds, &truth, &cfg, Execution::Sequential).unwrap();
            let b = select_pool(&p, &preds, &truth, &cfg, Execution::Parallel).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.selected.len(), 3);
            let mut dedup = a.selected.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(dedup.len(), 3);
            assert!(a.selected.iter().all(|&i| i < 5));
        }
    }

    #[test]
    fn pool_too_small() {
        let (p, preds, truth) = toy();
        let cfg = SelectionConfig::new(false, true, false, true, 5).unwrap();
        assert!(matches!(
            select_pool(&p, &preds, &truth, &cfg, Execution::Sequential),
            Err(SelectionError::PoolTooSmall { needed: 6, available: 5 })
        ));
    }

    proptest! {
        #[test]
        fn expert_is_distribution(rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 2..6)) {
            let s = expert_scores(&perf(rows), 10.0, 1.0).unwrap();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn diversity_ordering(
            data in prop::collection::vec((0usize..3, 0usize..3, 0usize..3), 1..50)
        ) {
            let truth: Vec<usize> = data.iter().map(|d| d.0).collect();
            let a: Vec<usize> = data.iter().map(|d| d.1).collect();
            let b: Vec<usize> = data.iter().map(|d| d.2).collect();
            let both = pairwise_diversity(&a, &b, &truth, false).unwrap();
            let any = pairwise_diversity(&a, &b, &truth, true).unwrap();
            prop_assert!(both <= any);
            prop_assert!((0.0..=1.0).contains(&both) && (0.0..=1.0).contains(&any));
            prop_assert_eq!(both, pairwise_diversity(&b, &a, &truth, false).unwrap());
            prop_assert_eq!(any, pairwise_diversity(&b, &a, &truth, true).unwrap());
        }
    }
}
