use super::{softmax, Classifier};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Gaussian naive Bayes with per-class feature means and variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayes {
    /// `None` for classes without training samples.
    classes: Vec<Option<ClassStats>>,
    n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassStats {
    log_prior: f64,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianNaiveBayes {
    /// `var_smoothing` is a fraction of the largest feature variance added
    /// to every variance.
    pub(crate) fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, var_smoothing: f64) -> Self {
        let (n, d) = x.dim();
        let max_var = (0..d)
            .map(|j| {
                let col = x.column(j);
                let mean = col.sum() / n as f64;
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
            })
            .fold(0.0, f64::max);
        let epsilon = if max_var > 0.0 { var_smoothing * max_var } else { 0.0 }.max(1e-12);

        let classes = (0..n_classes)
            .map(|c| {
                let rows: Vec<usize> = (0..n).filter(|&i| y[i] == c).collect();
                if rows.is_empty() {
                    return None;
                }
                let count = rows.len() as f64;
                let means: Vec<f64> =
                    (0..d).map(|j| rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / count).collect();
                let variances = (0..d)
                    .map(|j| {
                        rows.iter().map(|&i| (x[[i, j]] - means[j]).powi(2)).sum::<f64>() / count
                            + epsilon
                    })
                    .collect();
                Some(ClassStats { log_prior: (count / n as f64).ln(), means, variances })
            })
            .collect();
        Self { classes, n_features: d }
    }
}

impl Classifier for GaussianNaiveBayes {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let scores: Vec<f64> = self
            .classes
            .iter()
            .map(|stats| match stats {
                None => f64::NEG_INFINITY,
                Some(s) => {
                    s.log_prior
                        - 0.5
                            * row
                                .iter()
                                .zip(s.means.iter().zip(&s.variances))
                                .map(|(v, (m, var))| {
                                    (2.0 * std::f64::consts::PI * var).ln() + (v - m).powi(2) / var
                                })
                                .sum::<f64>()
                }
            })
            .collect();
        softmax(&scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_point_is_even() {
        // mirror-image classes: equal priors and variances
        let x = array![[-3.0, 1.0], [-5.0, -1.0], [-4.0, 0.5], [3.0, -1.0], [5.0, 1.0], [4.0, -0.5]];
        let y = [0, 0, 0, 1, 1, 1];
        let m = GaussianNaiveBayes::fit(x.view(), &y, 2, 1e-9);
        let p = m.proba_row(&[0.0, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6, "{p:?}");
    }

    #[test]
    fn absent_class_gets_zero() {
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let m = GaussianNaiveBayes::fit(x.view(), &[0, 0, 2, 2], 3, 1e-9);
        let p = m.proba_row(&[0.5]);
        assert_eq!(p[1], 0.0);
        assert!(p[0] > 0.99);
    }
}
