//! Base classifiers for the pool.
//!
//! Each built-in model implements [`Classifier`] over dense class indices
//! `0..n_classes`. [`fit`] trains one model from a [`ClassifierSpec`],
//! [`validate`] derives its per-class confidence weights (validation F1) and
//! [`train_pool`] does both for a list of specs, producing the
//! [`PerformanceMatrix`] that drives pool selection.

mod centroid;
mod knn;
mod linear;
mod mlp;
mod naive_bayes;
mod tree;

pub use centroid::NearestCentroid;
pub use knn::KNearestNeighbors;
pub use linear::SoftmaxRegression;
pub use mlp::MultiLayerPerceptron;
pub use naive_bayes::GaussianNaiveBayes;
pub use tree::DecisionTree;

use crate::evidence::MassVector;
use crate::metrics::{classification_report, per_class_f1, ClassificationReport, MetricsError};
use crate::parallel::{try_map_indices, Execution};
use crate::transform::{
    label_to_evidence, proba_to_evidence, ConfidenceWeights, SensitivityFactor, TransformError,
};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("pool needs at least two classifiers, got {0}")]
    PoolTooSmall(usize),
    #[error("classifier `{name}`: {source}")]
    InSpec { name: String, source: Box<ClassifierError> },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Shared behaviour of fitted models.
pub trait Classifier {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Class probabilities for one row of `n_features` values.
    fn proba_row(&self, row: &[f64]) -> Vec<f64>;

    /// Most probable class; ties go to the lowest index.
    fn predict_row(&self, row: &[f64]) -> usize {
        argmax(&self.proba_row(row))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of a log-score row. Entries equal to
/// `-inf` come out as exact zeros.
pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Which evidence transform a classifier's output goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Probability rows, weighted element-wise.
    #[default]
    Probabilistic,
    /// Hard labels with the sensitivity-to-zero factor.
    HardLabel,
}

fn default_var_smoothing() -> f64 {
    1e-9
}
fn default_k() -> usize {
    5
}
fn default_max_depth() -> usize {
    10
}
fn default_min_samples_split() -> usize {
    2
}
fn default_linear_epochs() -> usize {
    200
}
fn default_linear_lr() -> f64 {
    0.5
}
fn default_l2() -> f64 {
    1e-4
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_mlp_epochs() -> usize {
    20
}
fn default_mlp_lr() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    16
}

/// Model family plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelParams {
    GaussianNaiveBayes {
        #[serde(default = "default_var_smoothing")]
        var_smoothing: f64,
    },
    KNearestNeighbors {
        #[serde(default = "default_k")]
        k: usize,
    },
    DecisionTree {
        #[serde(default = "default_max_depth")]
        max_depth: usize,
        #[serde(default = "default_min_samples_split")]
        min_samples_split: usize,
    },
    NearestCentroid {},
    SoftmaxRegression {
        #[serde(default = "default_linear_epochs")]
        epochs: usize,
        #[serde(default = "default_linear_lr")]
        learning_rate: f64,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    MultiLayerPerceptron {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_mlp_epochs")]
        epochs: usize,
        #[serde(default = "default_mlp_lr")]
        learning_rate: f64,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

impl ModelParams {
    pub fn gaussian_naive_bayes() -> Self {
        Self::GaussianNaiveBayes { var_smoothing: default_var_smoothing() }
    }

    pub fn knn(k: usize) -> Self {
        Self::KNearestNeighbors { k }
    }

    pub fn decision_tree(max_depth: usize) -> Self {
        Self::DecisionTree { max_depth, min_samples_split: default_min_samples_split() }
    }

    pub fn nearest_centroid() -> Self {
        Self::NearestCentroid {}
    }

    pub fn softmax_regression() -> Self {
        Self::SoftmaxRegression {
            epochs: default_linear_epochs(),
            learning_rate: default_linear_lr(),
            l2: default_l2(),
        }
    }

    pub fn mlp(hidden: Vec<usize>) -> Self {
        Self::MultiLayerPerceptron {
            hidden,
            epochs: default_mlp_epochs(),
            learning_rate: default_mlp_lr(),
            batch_size: default_batch_size(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GaussianNaiveBayes { .. } => "gaussian_naive_bayes",
            Self::KNearestNeighbors { .. } => "k_nearest_neighbors",
            Self::DecisionTree { .. } => "decision_tree",
            Self::NearestCentroid {} => "nearest_centroid",
            Self::SoftmaxRegression { .. } => "softmax_regression",
            Self::MultiLayerPerceptron { .. } => "multi_layer_perceptron",
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: String| Err(ClassifierError::InvalidHyperparameter(msg));
        match self {
            Self::GaussianNaiveBayes { var_smoothing } if var_smoothing.is_nan() || *var_smoothing < 0.0 => {
                bad(format!("var_smoothing = {var_smoothing}"))
            }
            Self::KNearestNeighbors { k } if *k < 1 => bad("k must be >= 1".into()),
            Self::DecisionTree { max_depth, .. } if *max_depth < 1 => bad("max_depth must be >= 1".into()),
            Self::DecisionTree { min_samples_split, .. } if *min_samples_split < 2 => {
                bad("min_samples_split must be >= 2".into())
            }
            Self::SoftmaxRegression { epochs, learning_rate, l2 } => {
                if *epochs < 1 {
                    bad("epochs must be >= 1".into())
                } else if learning_rate.is_nan() || *learning_rate <= 0.0 || l2.is_nan() || *l2 < 0.0 {
                    bad(format!("learning_rate = {learning_rate}, l2 = {l2}"))
                } else {
                    Ok(())
                }
            }
            Self::MultiLayerPerceptron { hidden, epochs, learning_rate, batch_size } => {
                if hidden.is_empty() || hidden.len() > 2 || hidden.contains(&0) {
                    bad(format!("hidden must list one or two positive sizes, got {hidden:?}"))
                } else if *epochs < 1 || *batch_size < 1 {
                    bad("epochs and batch_size must be >= 1".into())
                } else if learning_rate.is_nan() || *learning_rate <= 0.0 {
                    bad(format!("learning_rate = {learning_rate}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// A named, configured member of the candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub name: String,
    #[serde(flatten)]
    pub params: ModelParams,
    #[serde(default)]
    pub output: OutputMode,
}

impl ClassifierSpec {
    pub fn new(name: impl Into<String>, params: ModelParams) -> Self {
        Self { name: name.into(), params, output: OutputMode::default() }
    }

    pub fn hard_labels(mut self) -> Self {
        self.output = OutputMode::HardLabel;
        self
    }

    pub fn is_probabilistic(&self) -> bool {
        self.output == OutputMode::Probabilistic
    }
}

/// Five-member pool used by the bundled experiments.
pub fn default_pool() -> Vec<ClassifierSpec> {
    vec![
        ClassifierSpec::new("gnb", ModelParams::gaussian_naive_bayes()),
        ClassifierSpec::new("knn", ModelParams::knn(5)),
        ClassifierSpec::new("tree", ModelParams::decision_tree(8)),
        ClassifierSpec::new("softmax", ModelParams::softmax_regression()),
        ClassifierSpec::new("mlp", ModelParams::mlp(vec![32])),
    ]
}

/// A fitted built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    GaussianNaiveBayes(GaussianNaiveBayes),
    KNearestNeighbors(KNearestNeighbors),
    DecisionTree(DecisionTree),
    NearestCentroid(NearestCentroid),
    SoftmaxRegression(SoftmaxRegression),
    MultiLayerPerceptron(MultiLayerPerceptron),
}

impl FittedModel {
    fn inner(&self) -> &dyn Classifier {
        match self {
            Self::GaussianNaiveBayes(m) => m,
            Self::KNearestNeighbors(m) => m,
            Self::DecisionTree(m) => m,
            Self::NearestCentroid(m) => m,
            Self::SoftmaxRegression(m) => m,
            Self::MultiLayerPerceptron(m) => m,
        }
    }

    fn check_width(&self, width: usize) -> Result<(), ClassifierError> {
        if width != self.n_features() {
            return Err(ClassifierError::DimensionMismatch(format!(
                "model expects {} features, got {width}",
                self.n_features()
            )));
        }
        Ok(())
    }

    pub fn try_proba_row(&self, row: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        self.check_width(row.len())?;
        Ok(self.proba_row(row))
    }

    pub fn try_predict_row(&self, row: &[f64]) -> Result<usize, ClassifierError> {
        self.check_width(row.len())?;
        Ok(self.predict_row(row))
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        self.check_width(x.ncols())?;
        let mut out = Array2::zeros((x.nrows(), self.n_classes()));
        for (i, row) in x.outer_iter().enumerate() {
            let p = self.proba_row(&row.to_vec());
            out.row_mut(i).iter_mut().zip(p).for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, ClassifierError> {
        self.check_width(x.ncols())?;
        Ok(x.outer_iter().map(|row| self.predict_row(&row.to_vec())).collect())
    }
}

impl Classifier for FittedModel {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn proba_row(&self, row: &[f64]) -> Vec<f64> {
        self.inner().proba_row(row)
    }

    fn predict_row(&self, row: &[f64]) -> usize {
        self.inner().predict_row(row)
    }
}

/// Checks shared by every training routine.
pub(crate) fn check_training_data(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<(), ClassifierError> {
    if x.nrows() != y.len() {
        return Err(ClassifierError::DimensionMismatch(format!(
            "{} rows vs {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(ClassifierError::DegenerateData("empty training set".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ClassifierError::DimensionMismatch(format!(
            "label {bad} outside {n_classes} classes"
        )));
    }
    let mut seen = vec![false; n_classes];
    y.iter().for_each(|&c| seen[c] = true);
    if seen.iter().filter(|s| **s).count() < 2 {
        return Err(ClassifierError::DegenerateData("fewer than two classes present".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ClassifierError::DegenerateData("non-finite feature value".into()));
    }
    Ok(())
}

/// Trains one model. Deterministic given `seed`.
pub fn fit(
    spec: &ClassifierSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<FittedModel, ClassifierError> {
    spec.params.validate()?;
    check_training_data(x, y, n_classes)?;
    Ok(match &spec.params {
        ModelParams::GaussianNaiveBayes { var_smoothing } => {
            FittedModel::GaussianNaiveBayes(GaussianNaiveBayes::fit(x, y, n_classes, *var_smoothing))
        }
        ModelParams::KNearestNeighbors { k } => {
            FittedModel::KNearestNeighbors(KNearestNeighbors::fit(x, y, n_classes, *k))
        }
        ModelParams::DecisionTree { max_depth, min_samples_split } => FittedModel::DecisionTree(
            DecisionTree::fit(x, y, n_classes, *max_depth, *min_samples_split),
        ),
        ModelParams::NearestCentroid {} => {
            FittedModel::NearestCentroid(NearestCentroid::fit(x, y, n_classes))
        }
        ModelParams::SoftmaxRegression { epochs, learning_rate, l2 } => {
            FittedModel::SoftmaxRegression(SoftmaxRegression::fit(
                x,
                y,
                n_classes,
                *epochs,
                *learning_rate,
                *l2,
            ))
        }
        ModelParams::MultiLayerPerceptron { hidden, epochs, learning_rate, batch_size } => {
            FittedModel::MultiLayerPerceptron(MultiLayerPerceptron::fit(
                x,
                y,
                n_classes,
                hidden,
                *epochs,
                *learning_rate,
                *batch_size,
                seed,
            ))
        }
    })
}

/// Per-class validation F1 as confidence weights, plus the full report.
/// Classes absent from the validation labels get weight 0.
pub fn validate(
    model: &FittedModel,
    x_va: ArrayView2<'_, f64>,
    y_va: &[usize],
) -> Result<(ConfidenceWeights, ClassificationReport), ClassifierError> {
    if x_va.nrows() != y_va.len() {
        return Err(ClassifierError::DimensionMismatch(format!(
            "{} rows vs {} labels",
            x_va.nrows(),
            y_va.len()
        )));
    }
    if y_va.is_empty() {
        return Err(ClassifierError::DegenerateData("empty validation set".into()));
    }
    let n = model.n_classes();
    let pred = model.predict(x_va)?;
    let weights = ConfidenceWeights::new(per_class_f1(y_va, &pred, n))?;
    let truth: Vec<i64> = y_va.iter().map(|&c| c as i64).collect();
    let pred: Vec<i64> = pred.iter().map(|&c| c as i64).collect();
    let report = classification_report(&truth, &pred, n)?;
    Ok((weights, report))
}

/// A validated pool member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub model: FittedModel,
    pub weights: ConfidenceWeights,
    pub validation: ClassificationReport,
    #[serde(default)]
    pub train_seconds: f64,
}

impl TrainedClassifier {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<usize, ClassifierError> {
        self.model.try_predict_row(row)
    }

    /// Mass vector for one row, through the transform matching the spec's
    /// output mode. Also returns the predicted class.
    pub fn evidence_row(
        &self,
        row: &[f64],
        sensitivity: SensitivityFactor,
    ) -> Result<(MassVector, usize), ClassifierError> {
        let proba = self.model.try_proba_row(row)?;
        let label = argmax(&proba);
        let mass = match self.spec.output {
            OutputMode::Probabilistic => proba_to_evidence(&proba, &self.weights)?,
            OutputMode::HardLabel => label_to_evidence(label, &self.weights, sensitivity)?,
        };
        Ok((mass, label))
    }
}

/// Classifier-by-class validation F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PerformanceMatrix {
    rows: Vec<Vec<f64>>,
}

impl PerformanceMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ClassifierError> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(ClassifierError::DimensionMismatch("ragged performance matrix".into()));
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ClassifierError::InvalidHyperparameter(
                "performance entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn n_classifiers(&self) -> usize {
        self.rows.len()
    }

    pub fn n_classes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, classifier: usize, class: usize) -> f64 {
        self.rows[classifier][class]
    }

    pub fn mean(&self, classifier: usize) -> f64 {
        let row = &self.rows[classifier];
        if row.is_empty() {
            0.0
        } else {
            row.iter().sum::<f64>() / row.len() as f64
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for PerformanceMatrix {
    type Error = ClassifierError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<PerformanceMatrix> for Vec<Vec<f64>> {
    fn from(m: PerformanceMatrix) -> Self {
        m.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPool {
    pub classifiers: Vec<TrainedClassifier>,
    pub performance: PerformanceMatrix,
}

/// Fits every spec on the training split and weights it on the validation
/// split. Member `i` trains with seed stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_pool(
    specs: &[ClassifierSpec],
    x_tr: ArrayView2<'_, f64>,
    y_tr: &[usize],
    x_va: ArrayView2<'_, f64>,
    y_va: &[usize],
    n_classes: usize,
    seed: u64,
    exec: Execution,
) -> Result<TrainedPool, ClassifierError> {
    if specs.len() < 2 {
        return Err(ClassifierError::PoolTooSmall(specs.len()));
    }
    let classifiers = try_map_indices(specs.len(), exec, |i| {
        let spec = &specs[i];
        let tag = |e: ClassifierError| ClassifierError::InSpec {
            name: spec.name.clone(),
            source: Box::new(e),
        };
        let start = Instant::now();
        let member_seed: u64 = crate::seeded_rng(seed, i as u64).random();
        let model = fit(spec, x_tr, y_tr, n_classes, member_seed).map_err(tag)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let (weights, validation) = validate(&model, x_va, y_va).map_err(tag)?;
        Ok::<_, ClassifierError>(TrainedClassifier { spec: spec.clone(), model, weights, validation, train_seconds })
    })?;
    let performance =
        PerformanceMatrix::new(classifiers.iter().map(|c| c.weights.as_slice().to_vec()).collect())?;
    Ok(TrainedPool { classifiers, performance })
}


#[cfg(test)]
mod tests {
    use super::test_support::line_blobs;
    use super::*;

    fn all_kinds() -> Vec<ClassifierSpec> {
        let mut specs = default_pool();
        specs.push(ClassifierSpec::new("centroid", ModelParams::nearest_centroid()));
        specs.push(ClassifierSpec::new("mlp2", ModelParams::mlp(vec![16, 8])));
        specs
    }

    #[test]
    fn every_kind_separates_far_blobs() {
        let (x, y) = line_blobs(2, 100, 10.0, 3);
        for spec in all_kinds() {
            let m = fit(&spec, x.view(), &y, 2, 11).unwrap();
            let pred = m.predict(x.view()).unwrap();
            let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
            assert!(acc >= 0.99, "{} accuracy {acc}", spec.name);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let (x, _) = line_blobs(2, 10, 10.0, 1);
        let y = vec![0; 20];
        for spec in all_kinds() {
            assert!(matches!(fit(&spec, x.view(), &y, 2, 0), Err(ClassifierError::DegenerateData(_))));
        }
    }

    #[test]
    fn dimension_checks() {
        let (x, y) = line_blobs(2, 10, 10.0, 1);
        let spec = ClassifierSpec::new("gnb", ModelParams::gaussian_naive_bayes());
        assert!(matches!(
            fit(&spec, x.view(), &y[..5], 2, 0),
            Err(ClassifierError::DimensionMismatch(_))
        ));
        let m = fit(&spec, x.view(), &y, 2, 0).unwrap();
        assert!(m.try_proba_row(&[1.0]).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(m.predict(empty.view()).unwrap().is_empty());
        assert_eq!(m.predict_proba(empty.view()).unwrap().nrows(), 0);
    }

    #[test]
    fn proba_rows_are_distributions() {
        let (x, y) = line_blobs(3, 40, 4.0, 5);
        let probe = line_blobs(3, 34, 4.0, 99).0;
        for spec in all_kinds() {
            let m = fit(&spec, x.view(), &y, 3, 2).unwrap();
            let p = m.predict_proba(probe.view()).unwrap();
            for (row, xrow) in p.outer_iter().zip(probe.outer_iter()) {
                assert!((row.sum() - 1.0).abs() < 1e-6, "{}", spec.name);
                assert_eq!(argmax(&row.to_vec()), m.predict_row(&xrow.to_vec()));
            }
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(ModelParams::knn(0).validate().is_err());
        assert!(ModelParams::decision_tree(0).validate().is_err());
        assert!(ModelParams::mlp(vec![]).validate().is_err());
        assert!(ModelParams::mlp(vec![4, 4, 4]).validate().is_err());
        let bad = ModelParams::MultiLayerPerceptron {
            hidden: vec![4],
            epochs: 0,
            learning_rate: 0.1,
            batch_size: 4,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn spec_serde() {
        let spec: ClassifierSpec =
            serde_json::from_str(r#"{"name":"k","kind":"k_nearest_neighbors","k":3,"output":"hard_label"}"#)
                .unwrap();
        assert_eq!(spec.params, ModelParams::knn(3));
        assert!(!spec.is_probabilistic());
        let d: ClassifierSpec = serde_json::from_str(r#"{"name":"t","kind":"decision_tree"}"#).unwrap();
        assert_eq!(d.params, ModelParams::decision_tree(10));
        assert!(serde_json::from_str::<ClassifierSpec>(r#"{"name":"x","kind":"svm"}"#).is_err());
    }

    #[test]
    fn validation_weights() {
        let (x, y) = line_blobs(2, 50, 10.0, 7);
        let m = fit(&ClassifierSpec::new("c", ModelParams::nearest_centroid()), x.view(), &y, 2, 0).unwrap();
        let (w, report) = validate(&m, x.view(), &y).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        assert_eq!(report.macro_f1, 1.0);
        // a class missing from the validation labels weighs 0
        let only0: Vec<usize> = y.iter().copied().filter(|&c| c == 0).collect();
        let x0 = x.slice(ndarray::s![..only0.len(), ..]).to_owned();
        let (w, _) = validate(&m, x0.view(), &only0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn pool_is_deterministic() {
        let (x, y) = line_blobs(3, 30, 3.0, 8);
        let (xv, yv) = line_blobs(3, 10, 3.0, 9);
        let specs = all_kinds();
        let a = train_pool(&specs, x.view(), &y, xv.view(), &yv, 3, 42, Execution::Parallel).unwrap();
        let b = train_pool(&specs, x.view(), &y, xv.view(), &yv, 3, 42, Execution::Sequential).unwrap();
        assert_eq!(a.performance, b.performance);
        assert_eq!(a.performance.n_classifiers(), specs.len());
        assert_eq!(a.performance.n_classes(), 3);
        for (ca, cb) in a.classifiers.iter().zip(&b.classifiers) {
            assert_eq!(ca.model, cb.model);
        }
    }

    #[test]
    fn pool_errors_name_the_spec() {
        let (x, y) = line_blobs(2, 10, 10.0, 1);
        let specs = vec![
            ClassifierSpec::new("ok", ModelParams::gaussian_naive_bayes()),
            ClassifierSpec::new("broken", ModelParams::knn(0)),
        ];
        let err = train_pool(&specs, x.view(), &y, x.view(), &y, 2, 0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, ClassifierError::InSpec { ref name, .. } if name == "broken"));
        assert!(matches!(
            train_pool(&specs[..1], x.view(), &y, x.view(), &y, 2, 0, Execution::Sequential),
            Err(ClassifierError::PoolTooSmall(1))
        ));
    }
}
