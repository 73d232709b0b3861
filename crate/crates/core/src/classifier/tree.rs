use super::Classifier;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// CART classification tree with Gini impurity.
///
/// Splits are searched feature by feature over midpoints between distinct
/// sorted values; the first split with the largest impurity decrease wins,
/// so training is deterministic. Leaves hold class frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_features: usize,
    n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { proba: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        rows.iter().for_each(|&i| counts[self.y[i]] += 1);
        counts
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let split = if pure || depth >= self.max_depth || rows.len() < self.min_samples_split {
            None
        } else {
            self.best_split(&rows, &counts)
        };
        let id = self.nodes.len();
        match split {
            None => {
                let n = rows.len() as f64;
                self.nodes.push(Node::Leaf { proba: counts.iter().map(|&c| c as f64 / n).collect() });
            }
            Some((feature, threshold)) => {
                self.nodes.push(Node::Leaf { proba: Vec::new() });
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| self.x[[i, feature]] <= threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = Node::Split { feature, threshold, left, right };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let parent = gini(counts, n);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for feature in 0..self.x.ncols() {
            sorted.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for pos in 0..n - 1 {
                let c = self.y[sorted[pos]];
                left[c] += 1;
                right[c] -= 1;
                let v = self.x[[sorted[pos], feature]];
                let next = self.x[[sorted[pos + 1], feature]];
                if v == next {
                    continue;
                }
                let nl = pos + 1;
                let weighted = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
                let gain = parent - weighted;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, feature, v + (next - v) / 2.0));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

impl DecisionTree {
    pub(crate) fn fit(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        max_depth: usize,
        min_samples_split: usize,
    ) -> Self {
        let mut b = Builder { x, y, n_classes, max_depth, min_samples_split, nodes: Vec::new() };
        b.build((0..y.len()).collect(), 0);
        Self { nodes: b.nodes, n_features: x.ncols(), n_classes }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl Classifier for DecisionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { proba } => return proba.clone(),
                Node::Split { feature, threshold, left, right } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}
