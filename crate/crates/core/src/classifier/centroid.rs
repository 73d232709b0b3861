use super::{softmax, Classifier};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Nearest class mean. Probabilities are a softmax over `-d²/2`, i.e. an
/// isotropic unit-variance Gaussian per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    centroids: Vec<Option<Vec<f64>>>,
    n_features: usize,
}

impl NearestCentroid {
    pub(crate) fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> Self {
        let d = x.ncols();
        let mut sums = vec![vec![0.0; d]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (row, &c) in x.outer_iter().zip(y) {
            counts[c] += 1;
            sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
            .collect();
        Self { centroids, n_features: d }
    }
}

impl Classifier for NearestCentroid {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.centroids.len()
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| match c {
                Some(c) => -0.5 * c.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
                None => f64::NEG_INFINITY,
            })
            .collect();
        softmax(&scores)
    }
}
