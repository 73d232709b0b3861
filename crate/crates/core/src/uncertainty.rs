//! Batch uncertainty quantification.
//!
//! Each iteration draws a validation batch, turns the subject's output on
//! every batch row into evidence and folds the batch under both combination
//! rules. The final fold step's conflict is the uncertainty for that rule.
//! Supervised subjects also report the performance product over the batch.

use crate::classifier::{ClassifierError, TrainedClassifier};
use crate::ensemble::{EnsembleError, EnsembleModel};
use crate::evidence::{combine_many, combine_many_traced, EvidenceError, MassVector, Rule};
use crate::metrics::per_class_f1;
use crate::parallel::{try_map_indices, Execution};
use crate::transform::{label_to_evidence, ConfidenceWeights, SensitivityFactor, TransformError};
use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UqError {
    #[error("performance vector is empty")]
    EmptyVector,
    #[error("performance value {0} outside [0, 1]")]
    InvalidPerformance(f64),
    #[error("batch of {batch} exceeds the {available} rows available")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("invalid uncertainty config: {0}")]
    InvalidConfig(String),
    #[error("{rows} rows vs {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Product of complements of per-class performance values.
pub fn uq_performance(per_class: &[f64]) -> Result<f64, UqError> {
    if per_class.is_empty() {
        return Err(UqError::EmptyVector);
    }
    per_class.iter().try_fold(1.0, |acc, &p| {
        if (0.0..=1.0).contains(&p) {
            Ok(acc * (1.0 - p))
        } else {
            Err(UqError::InvalidPerformance(p))
        }
    })
}

/// How an iteration's batch is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// Uniformly from all validation rows, without replacement.
    Uniform,
    /// Pick one class uniformly among those with enough rows, then draw the
    /// batch from that class without replacement.
    #[default]
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub sampling: BatchSampling,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self { batch_size: 20, iterations: 50, seed: 0, sampling: BatchSampling::default(), execution: Execution::default() }
    }
}

impl UqConfig {
    pub fn validate(&self) -> Result<(), UqError> {
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(UqError::InvalidConfig("batch_size and iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Something whose per-row output can be expressed as evidence.
pub trait EvidenceSource: Sync {
    fn n_classes(&self) -> usize;

    /// Mass vector and predicted class for one row.
    fn evidence(&self, row: &[f64]) -> Result<(MassVector, usize), UqError>;

    /// Whether ground truth may be used to score this subject.
    fn supervised(&self) -> bool {
        true
    }
}

/// A pool member paired with the sensitivity used for hard-label evidence.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierSource<'a> {
    pub classifier: &'a TrainedClassifier,
    pub sensitivity: SensitivityFactor,
}

impl EvidenceSource for ClassifierSource<'_> {
    fn n_classes(&self) -> usize {
        self.classifier.n_classes()
    }

    fn evidence(&self, row: &[f64]) -> Result<(MassVector, usize), UqError> {
        Ok(self.classifier.evidence_row(row, self.sensitivity)?)
    }
}

/// The ensemble's fused mass, treated as unsupervised.
impl EvidenceSource for EnsembleModel {
    fn n_classes(&self) -> usize {
        self.frame.len()
    }

    fn evidence(&self, row: &[f64]) -> Result<(MassVector, usize), UqError> {
        let d = self.predict(row)?;
        let label = d.label;
        Ok((d.fused_dempster.unwrap_or(d.fused_yager), label))
    }

    fn supervised(&self) -> bool {
        false
    }
}

/// Emits hard-label evidence for a pseudo-random class derived from the row
/// contents and a seed. Serves as an uninformed baseline.
#[derive(Debug, Clone)]
pub struct RandomLabelSource {
    pub n_classes: usize,
    pub weights: ConfidenceWeights,
    pub sensitivity: SensitivityFactor,
    pub seed: u64,
}

impl RandomLabelSource {
    fn label_for(&self, row: &[f64]) -> usize {
        // FNV-1a over the raw bits keeps the label stable across runs.
        let hash = row.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            v.to_bits().to_le_bytes().iter().fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
        });
        crate::seeded_rng(self.seed, hash).random_range(0..self.n_classes)
    }
}

impl EvidenceSource for RandomLabelSource {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn evidence(&self, row: &[f64]) -> Result<(MassVector, usize), UqError> {
        let label = self.label_for(row);
        Ok((label_to_evidence(label, &self.weights, self.sensitivity)?, label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqIteration {
    pub iteration: usize,
    /// Absent for unsupervised subjects.
    pub uq_p: Option<f64>,
    pub uq_ds: f64,
    pub uq_y: f64,
    /// Dempster conflict after every fold step.
    pub ds_steps: Vec<f64>,
    pub total_conflict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub median: f64,
    pub max: f64,
}

impl SeriesSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let median = crate::ensemble::quantile(values, 0.5)?;
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { median, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqTrace {
    pub iterations: Vec<UqIteration>,
    pub uq_p: Option<SeriesSummary>,
    pub uq_ds: SeriesSummary,
    pub uq_y: SeriesSummary,
}

impl UqTrace {
    fn from_iterations(iterations: Vec<UqIteration>) -> Self {
        let uq_p: Option<Vec<f64>> = iterations.iter().map(|i| i.uq_p).collect();
        let ds: Vec<f64> = iterations.iter().map(|i| i.uq_ds).collect();
        let y: Vec<f64> = iterations.iter().map(|i| i.uq_y).collect();
        Self {
            uq_p: uq_p.and_then(|v| SeriesSummary::of(&v)),
            uq_ds: SeriesSummary::of(&ds).expect("at least one iteration"),
            uq_y: SeriesSummary::of(&y).expect("at least one iteration"),
            iterations,
        }
    }
}

fn draw_batch(y: &[usize], n_classes: usize, cfg: &UqConfig, iteration: usize) -> Result<Vec<usize>, UqError> {
    let mut rng = crate::seeded_rng(cfg.seed, iteration as u64);
    match cfg.sampling {
        BatchSampling::Uniform => Ok(sample(&mut rng, y.len(), cfg.batch_size).into_vec()),
        BatchSampling::PerClass => {
            let by_class: Vec<Vec<usize>> = (0..n_classes)
                .map(|c| (0..y.len()).filter(|&i| y[i] == c).collect())
                .filter(|rows: &Vec<usize>| rows.len() >= cfg.batch_size)
                .collect();
            if by_class.is_empty() {
                let largest = (0..n_classes).map(|c| y.iter().filter(|&&l| l == c).count()).max().unwrap_or(0);
                return Err(UqError::BatchTooLarge { batch: cfg.batch_size, available: largest });
            }
            let rows = &by_class[rng.random_range(0..by_class.len())];
            Ok(sample(&mut rng, rows.len(), cfg.batch_size).into_iter().map(|i| rows[i]).collect())
        }
    }
}

/// Fuses one batch of evidence. Total conflict under Dempster's rule
/// records an uncertainty of 1.
pub fn batch_conflicts(masses: &[MassVector]) -> Result<(f64, f64, Vec<f64>, bool), UqError> {
    let uq_y = combine_many(masses, Rule::Yager)?.conflict;
    match combine_many_traced(masses, Rule::Dempster) {
        Ok((_, steps)) => Ok((steps.last().copied().unwrap_or(0.0), uq_y, steps, false)),
        Err(EvidenceError::TotalConflict(_)) => Ok((1.0, uq_y, Vec::new(), true)),
        Err(e) => Err(e.into()),
    }
}

/// Runs `cfg.iterations` independent batches over the validation split.
pub fn uq_batch<S: EvidenceSource + ?Sized>(
    subject: &S,
    x_va: ArrayView2<'_, f64>,
    y_va: &[usize],
    cfg: &UqConfig,
) -> Result<UqTrace, UqError> {
    cfg.validate()?;
    if x_va.nrows() != y_va.len() {
        return Err(UqError::LengthMismatch { rows: x_va.nrows(), labels: y_va.len() });
    }
    if cfg.batch_size > y_va.len() {
        return Err(UqError::BatchTooLarge { batch: cfg.batch_size, available: y_va.len() });
    }
    let n_classes = subject.n_classes();
    let iterations = try_map_indices(cfg.iterations, cfg.execution, |it| {
        let batch = draw_batch(y_va, n_classes, cfg, it)?;
        let mut masses = Vec::with_capacity(batch.len());
        let mut pred = Vec::with_capacity(batch.len());
        for &r in &batch {
            let row = x_va.row(r).to_vec();
            let (m, label) = subject.evidence(&row)?;
            masses.push(m);
            pred.push(label);
        }
        let (uq_ds, uq_y, ds_steps, total_conflict) = batch_conflicts(&masses)?;
        let uq_p = if subject.supervised() {
            let truth: Vec<usize> = batch.iter().map(|&r| y_va[r]).collect();
            let f1 = per_class_f1(&truth, &pred, n_classes);
            let present: Vec<f64> = (0..n_classes).filter(|c| truth.contains(c)).map(|c| f1[c]).collect();
            Some(uq_performance(&present)?)
        } else {
            None
        };
        Ok::<_, UqError>(UqIteration { iteration: it, uq_p, uq_ds, uq_y, ds_steps, total_conflict })
    })?;
    Ok(UqTrace::from_iterations(iterations))
}
