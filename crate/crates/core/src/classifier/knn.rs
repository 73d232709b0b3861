use super::Classifier;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Euclidean k-nearest neighbours; probabilities are neighbour vote
/// fractions. Distance ties are broken by training-row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KNearestNeighbors {
    k: usize,
    n_classes: usize,
    x: Array2<f64>,
    y: Vec<usize>,
}

impl KNearestNeighbors {
    pub(crate) fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, k: usize) -> Self {
        Self { k: k.min(y.len()), n_classes, x: x.to_owned(), y: y.to_vec() }
    }
}

impl Classifier for KNearestNeighbors {
    fn n_features(&self) -> usize {
        self.x.ncols()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .outer_iter()
            .enumerate()
            .map(|(i, t)| (t.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_key);
            dist.truncate(self.k);
        }
        let mut votes = vec![0.0; self.n_classes];
        for &(_, i) in &dist {
            votes[self.y[i]] += 1.0;
        }
        votes.iter_mut().for_each(|v| *v /= self.k as f64);
        votes
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::line_blobs;
    use super::*;

    #[test]
    fn one_nn_memorizes() {
        let (x, y) = line_blobs(3, 30, 1.0, 4);
        let m = KNearestNeighbors::fit(x.view(), &y, 3, 1);
        for (row, &label) in x.outer_iter().zip(&y) {
            assert_eq!(m.predict_row(&row.to_vec()), label);
        }
    }

    #[test]
    fn vote_fractions() {
        let x = ndarray::array![[0.0], [1.0], [2.0], [10.0]];
        let m = KNearestNeighbors::fit(x.view(), &[0, 1, 1, 0], 2, 3);
        assert_eq!(m.proba_row(&[0.9]), vec![1.0 / 3.0, 2.0 / 3.0]);
        let big = KNearestNeighbors::fit(x.view(), &[0, 1, 1, 0], 2, 10);
        assert_eq!(big.proba_row(&[0.0]), vec![0.5, 0.5]);
    }
}
