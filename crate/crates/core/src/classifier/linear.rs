use super::{softmax, Classifier};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Multinomial logistic regression trained by full-batch gradient descent
/// from zero weights, so training is deterministic without a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    /// `n_classes x n_features`
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl SoftmaxRegression {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        epochs: usize,
        learning_rate: f64,
        l2: f64,
    ) -> Self {
        let (n, d) = x.dim();
        let mut weights = Array2::<f64>::zeros((n_classes, d));
        let mut bias = Array1::<f64>::zeros(n_classes);
        let mut onehot = Array2::<f64>::zeros((n, n_classes));
        y.iter().enumerate().for_each(|(i, &c)| onehot[[i, c]] = 1.0);
        for _ in 0..epochs {
            let mut logits = x.dot(&weights.t());
            logits += &bias;
            let mut delta = logits;
            for mut row in delta.outer_iter_mut() {
                let p = softmax(row.as_slice().expect("row-major logits"));
                row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
            }
            delta -= &onehot;
            let grad_w = delta.t().dot(&x) / n as f64 + &weights * l2;
            let grad_b = delta.sum_axis(Axis(0)) / n as f64;
            weights.scaled_add(-learning_rate, &grad_w);
            bias.scaled_add(-learning_rate, &grad_b);
        }
        Self { weights, bias }
    }
}

impl Classifier for SoftmaxRegression {
    fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .outer_iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(row).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect();
        softmax(&logits)
    }
}
