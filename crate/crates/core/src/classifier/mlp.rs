use super::{softmax, Classifier};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const MOMENTUM: f64 = 0.9;

/// Fully connected network: one or two ReLU hidden layers and a softmax
/// output, trained with seeded mini-batch SGD with momentum on
/// cross-entropy. He-normal initialisation and the per-epoch shuffle both
/// come from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLayerPerceptron {
    layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// `outputs x inputs`
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl Dense {
    fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        input.dot(&self.weights.t()) + &self.bias
    }
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

impl MultiLayerPerceptron {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        hidden: &[usize],
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let mut rng = crate::seeded_rng(seed, 0);
        let mut sizes = vec![x.ncols()];
        sizes.extend_from_slice(hidden);
        sizes.push(n_classes);
        let mut layers: Vec<Dense> = sizes
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive fan-in");
                Dense {
                    weights: Array2::from_shape_simple_fn((w[1], w[0]), || normal.sample(&mut rng)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let mut velocity: Vec<(Array2<f64>, Array1<f64>)> = layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();

        let mut order: Vec<usize> = (0..y.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(batch_size) {
                let input = x.select(Axis(0), batch);
                let grads = Self::gradients(&layers, input, batch.iter().map(|&i| y[i]));
                for ((layer, vel), (gw, gb)) in layers.iter_mut().zip(&mut velocity).zip(grads) {
                    vel.0 = &vel.0 * MOMENTUM - &(gw * learning_rate);
                    vel.1 = &vel.1 * MOMENTUM - &(gb * learning_rate);
                    layer.weights += &vel.0;
                    layer.bias += &vel.1;
                }
            }
        }
        Self { layers }
    }

    // Mean cross-entropy gradients for one batch, in layer order.
    fn gradients(
        layers: &[Dense],
        input: Array2<f64>,
        labels: impl Iterator<Item = usize>,
    ) -> Vec<(Array2<f64>, Array1<f64>)> {
        let m = input.nrows() as f64;
        let mut activations = vec![input];
        for (i, layer) in layers.iter().enumerate() {
            let z = layer.forward(activations.last().expect("input present"));
            activations.push(if i + 1 < layers.len() { relu(z) } else { z });
        }
        let mut delta = activations.pop().expect("output present");
        for mut row in delta.outer_iter_mut() {
            let p = softmax(&row.to_vec());
            row.iter_mut().zip(p).for_each(|(r, v)| *r = v);
        }
        for (mut row, c) in delta.outer_iter_mut().zip(labels) {
            row[c] -= 1.0;
        }
        delta /= m;

        let mut grads = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate().rev() {
            let a_prev = &activations[i];
            grads.push((delta.t().dot(a_prev), delta.sum_axis(Axis(0))));
            if i > 0 {
                let mut back = delta.dot(&layer.weights);
                back.zip_mut_with(a_prev, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        grads
    }
}

impl Classifier for MultiLayerPerceptron {
    fn n_features(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    fn n_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.nrows()
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let mut a = Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape");
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if i + 1 < self.layers.len() {
                a = relu(a);
            }
        }
        softmax(&a.row(0).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::line_blobs;
    use super::*;

    // Central finite differences on the batch loss against the analytic
    // gradient.
    #[test]
    fn gradients_match_finite_differences() {
        let (x, y) = line_blobs(3, 4, 1.5, 21);
        let net = MultiLayerPerceptron::fit(x.view(), &y, 3, &[5, 4], 1, 1e-3, 4, 9);
        let loss = |layers: &[Dense]| {
            let m = MultiLayerPerceptron { layers: layers.to_vec() };
            x.outer_iter()
                .zip(&y)
                .map(|(r, &c)| -m.proba_row(&r.to_vec())[c].ln())
                .sum::<f64>()
                / y.len() as f64
        };
        let grads = MultiLayerPerceptron::gradients(&net.layers, x.to_owned(), y.iter().copied());
        let h = 1e-6;
        for l in 0..net.layers.len() {
            for idx in [(0usize, 0usize), (1, 1)] {
                let mut plus = net.layers.clone();
                plus[l].weights[idx] += h;
                let mut minus = net.layers.clone();
                minus[l].weights[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grads[l].0[idx];
                assert!((numeric - analytic).abs() < 1e-5, "layer {l} {idx:?}: {numeric} vs {analytic}");
            }
            let mut plus = net.layers.clone();
            plus[l].bias[0] += h;
            let mut minus = net.layers.clone();
            minus[l].bias[0] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((numeric - grads[l].1[0]).abs() < 1e-5);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (x, y) = line_blobs(2, 30, 3.0, 2);
        let a = MultiLayerPerceptron::fit(x.view(), &y, 2, &[8], 3, 0.01, 8, 5);
        let b = MultiLayerPerceptron::fit(x.view(), &y, 2, &[8], 3, 0.01, 8, 5);
        let c = MultiLayerPerceptron::fit(x.view(), &y, 2, &[8], 3, 0.01, 8, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
