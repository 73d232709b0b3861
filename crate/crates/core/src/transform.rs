//! Classifier outputs to mass vectors.
//!
//! Hard labels go through [`label_to_evidence`]: the active class receives
//! `k·w[active]`, every other class `(1-k)/(n-1)·w[c]`, and `Θ` takes the
//! remainder. Probability rows go through [`proba_to_evidence`]: the
//! element-wise product `p ∘ w` fills the singletons and `Θ` takes
//! `1 - p·w`.

use crate::evidence::{EvidenceError, MassVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sensitivity exponent used when none is configured.
pub const DEFAULT_SENSITIVITY_EXPONENT: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("sensitivity exponent must be at least 1, got {0}")]
    InvalidF(u32),
    #[error("label index {label} outside frame of {n} classes")]
    UnknownLabel { label: usize, n: usize },
    #[error("{weights} weights for {classes} classes")]
    WeightDimensionMismatch { weights: usize, classes: usize },
    #[error("confidence weight {index} = {value} outside [0, 1]")]
    InvalidWeight { index: usize, value: f64 },
    #[error("not a probability vector: {0}")]
    NotAProbabilityVector(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// Per-class confidence weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceWeights(Vec<f64>);

impl ConfidenceWeights {
    pub fn new(per_class: Vec<f64>) -> Result<Self, TransformError> {
        for (index, &value) in per_class.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(TransformError::InvalidWeight { index, value });
            }
        }
        Ok(Self(per_class))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ConfidenceWeights {
    type Error = TransformError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ConfidenceWeights> for Vec<f64> {
    fn from(w: ConfidenceWeights) -> Self {
        w.0
    }
}

/// `k = 1 - 10^(-F)`: the near-one value given to an active hard label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SensitivityFactor {
    exponent: u32,
    k: f64,
}

impl SensitivityFactor {
    pub fn new(exponent: u32) -> Result<Self, TransformError> {
        if exponent < 1 {
            return Err(TransformError::InvalidF(exponent));
        }
        let k = 1.0 - 10f64.powi(-(exponent as i32));
        Ok(Self { exponent, k })
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn k(&self) -> f64 {
        self.k
    }
}

impl Default for SensitivityFactor {
    fn default() -> Self {
        Self::new(DEFAULT_SENSITIVITY_EXPONENT).expect("default exponent is valid")
    }
}

impl TryFrom<u32> for SensitivityFactor {
    type Error = TransformError;

    fn try_from(f: u32) -> Result<Self, Self::Error> {
        Self::new(f)
    }
}

impl From<SensitivityFactor> for u32 {
    fn from(s: SensitivityFactor) -> Self {
        s.exponent
    }
}

pub fn sensitivity_factor(exponent: u32) -> Result<SensitivityFactor, TransformError> {
    SensitivityFactor::new(exponent)
}

/// Mass vector for a hard prediction of class `active`.
pub fn label_to_evidence(
    active: usize,
    weights: &ConfidenceWeights,
    sensitivity: SensitivityFactor,
) -> Result<MassVector, TransformError> {
    let n = weights.len();
    if n < 2 {
        return Err(EvidenceError::FrameTooSmall(n).into());
    }
    if active >= n {
        return Err(TransformError::UnknownLabel { label: active, n });
    }
    let k = sensitivity.k();
    let rest = (1.0 - k) / (n - 1) as f64;
    let singletons: Vec<f64> = weights
        .as_slice()
        .iter()
        .enumerate()
        .map(|(c, &w)| if c == active { k * w } else { rest * w })
        .collect();
    let theta = (1.0 - singletons.iter().sum::<f64>()).max(0.0);
    Ok(MassVector::new(singletons, theta)?)
}

/// Mass vector for a probability row.
///
/// Rows that miss a unit sum by at most `1e-6` are renormalised first.
pub fn proba_to_evidence(
    proba: &[f64],
    weights: &ConfidenceWeights,
) -> Result<MassVector, TransformError> {
    if proba.len() != weights.len() {
        return Err(TransformError::WeightDimensionMismatch {
            weights: weights.len(),
            classes: proba.len(),
        });
    }
    if let Some(p) = proba.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(TransformError::NotAProbabilityVector(format!("entry {p}")));
    }
    let sum: f64 = proba.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(TransformError::NotAProbabilityVector(format!("sum {sum}")));
    }
    let singletons: Vec<f64> =
        proba.iter().zip(weights.as_slice()).map(|(p, w)| p / sum * w).collect();
    let theta = (1.0 - singletons.iter().sum::<f64>()).max(0.0);
    Ok(MassVector::new(singletons, theta)?)
}
