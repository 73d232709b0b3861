//! Mass functions over a class frame and their combination.
//!
//! Masses are restricted to the singletons of the frame plus the whole frame
//! `Θ`, whose mass is the uncertainty term. Under that restriction the
//! conjunctive combination of two masses is `O(n)`:
//!
//! - `{i} ∩ {i} = {i}`, `{i} ∩ Θ = {i}`, `Θ ∩ Θ = Θ`
//! - `{i} ∩ {j} = ∅` for `i != j`, which is the conflict
//!
//! Dempster's rule renormalises the non-conflicting products by `1 - conflict`;
//! Yager's rule keeps them as they are and moves the conflict onto `Θ`.
//! [`oracle`] combines general mass functions over the full power set and is
//! used to cross-check the specialised combiners.

pub mod oracle;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Absolute tolerance on the sum of a mass vector.
pub const SUM_TOLERANCE: f64 = 1e-9;
/// Inputs off by more than [`SUM_TOLERANCE`] but within this bound are renormalised.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
/// Dempster's rule is undefined once the conflict reaches `1 - TOTAL_CONFLICT_EPS`.
pub const TOTAL_CONFLICT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvidenceError {
    #[error("frame needs at least two labels, got {0}")]
    FrameTooSmall(usize),
    #[error("duplicate frame label `{0}`")]
    DuplicateLabel(String),
    #[error("frame mismatch: {left} vs {right} singletons")]
    FrameMismatch { left: usize, right: usize },
    #[error("total conflict between sources (conflict = {0})")]
    TotalConflict(f64),
    #[error("cannot combine an empty sequence of masses")]
    EmptySequence,
    #[error("mass entry {index} is invalid ({value})")]
    InvalidMass { index: usize, value: f64 },
    #[error("masses sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("focal element {0:#b} is not a subset of the frame")]
    FocalOutsideFrame(u64),
    #[error("compound focal element {0:#b} cannot be represented as a mass vector")]
    CompoundFocal(u64),
}

/// The ordered set of class hypotheses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Frame {
    labels: Vec<String>,
}

impl Frame {
    pub fn new<I, S>(labels: I) -> Result<Self, EvidenceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(EvidenceError::FrameTooSmall(labels.len()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(EvidenceError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Frame `F0, F1, ..., F{n-1}`.
    pub fn with_size(n: usize) -> Result<Self, EvidenceError> {
        Self::new((0..n).map(|i| format!("F{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl TryFrom<Vec<String>> for Frame {
    type Error = EvidenceError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Frame::new(labels)
    }
}

impl From<Frame> for Vec<String> {
    fn from(frame: Frame) -> Self {
        frame.labels
    }
}

/// A basic belief assignment over `n` singletons plus `Θ`.
///
/// Entries are non-negative and sum to one within [`SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MassVector {
    singletons: Vec<f64>,
    theta: f64,
}

impl MassVector {
    /// Validates and builds a mass vector. A sum within
    /// [`RENORMALIZE_TOLERANCE`] of one is renormalised; anything further off
    /// is rejected.
    pub fn new(singletons: Vec<f64>, theta: f64) -> Result<Self, EvidenceError> {
        if singletons.len() < 2 {
            return Err(EvidenceError::FrameTooSmall(singletons.len()));
        }
        for (index, &value) in singletons.iter().chain(std::iter::once(&theta)).enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(EvidenceError::InvalidMass { index, value });
            }
        }
        let sum = singletons.iter().sum::<f64>() + theta;
        let mut mass = Self { singletons, theta };
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
                return Err(EvidenceError::NotNormalized(sum));
            }
            mass.singletons.iter_mut().for_each(|m| *m /= sum);
            mass.theta /= sum;
        }
        Ok(mass)
    }

    /// Builds from a row `[m_1, ..., m_n, m_Θ]`.
    pub fn from_slice(row: &[f64]) -> Result<Self, EvidenceError> {
        match row.split_last() {
            Some((&theta, singletons)) => Self::new(singletons.to_vec(), theta),
            None => Err(EvidenceError::FrameTooSmall(0)),
        }
    }

    /// All mass on `Θ`: total ignorance, the neutral element of both rules.
    pub fn vacuous(n: usize) -> Self {
        Self { singletons: vec![0.0; n], theta: 1.0 }
    }

    /// All mass on one singleton.
    pub fn certain(n: usize, class: usize) -> Self {
        let mut singletons = vec![0.0; n];
        singletons[class] = 1.0;
        Self { singletons, theta: 0.0 }
    }

    // Callers guarantee non-negative entries summing to one up to rounding.
    pub(crate) fn from_parts_unchecked(singletons: Vec<f64>, theta: f64) -> Self {
        debug_assert!(singletons.iter().all(|m| *m >= 0.0) && theta >= 0.0);
        Self { singletons, theta }
    }

    pub fn n(&self) -> usize {
        self.singletons.len()
    }

    pub fn singletons(&self) -> &[f64] {
        &self.singletons
    }

    pub fn singleton(&self, index: usize) -> f64 {
        self.singletons[index]
    }

    /// Mass on `Θ`, the uncertainty term.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn total(&self) -> f64 {
        self.singletons.iter().sum::<f64>() + self.theta
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.singletons.clone();
        v.push(self.theta);
        v
    }

    /// Index of the largest singleton mass; `Θ` never wins and ties go to the
    /// lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.singletons.iter().enumerate().skip(1) {
            if m > self.singletons[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for MassVector {
    type Error = EvidenceError;

    fn try_from(row: Vec<f64>) -> Result<Self, Self::Error> {
        MassVector::from_slice(&row)
    }
}

impl From<MassVector> for Vec<f64> {
    fn from(m: MassVector) -> Self {
        m.to_vec()
    }
}

impl fmt::Display for MassVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for m in &self.singletons {
            write!(f, "{m:.6}, ")?;
        }
        write!(f, "Θ: {:.6}]", self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Dempster,
    Yager,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Dempster => "dempster",
            Rule::Yager => "yager",
        })
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dempster" | "ds" => Ok(Rule::Dempster),
            "yager" | "y" => Ok(Rule::Yager),
            other => Err(format!("unknown combination rule `{other}`")),
        }
    }
}

/// Outcome of combining two or more masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub fused: MassVector,
    /// Mass of the empty intersections: `b_k` for Dempster, `q(∅)` for Yager.
    pub conflict: f64,
    pub rule: Rule,
}

struct Products {
    singletons: Vec<f64>,
    theta: f64,
    conflict: f64,
}

// Conjunctive products shared by both rules.
fn conjunctive(a: &MassVector, b: &MassVector) -> Result<Products, EvidenceError> {
    if a.n() != b.n() {
        return Err(EvidenceError::FrameMismatch { left: a.n(), right: b.n() });
    }
    let total_b: f64 = b.singletons.iter().sum();
    let mut conflict = 0.0;
    let singletons = a
        .singletons
        .iter()
        .zip(&b.singletons)
        .map(|(&ai, &bi)| {
            conflict += ai * (total_b - bi);
            ai * bi + ai * b.theta + a.theta * bi
        })
        .collect();
    Ok(Products { singletons, theta: a.theta * b.theta, conflict: conflict.clamp(0.0, 1.0) })
}

/// Dempster's rule of combination.
pub fn combine_dempster(a: &MassVector, b: &MassVector) -> Result<FusionResult, EvidenceError> {
    let p = conjunctive(a, b)?;
    if p.conflict >= 1.0 - TOTAL_CONFLICT_EPS {
        return Err(EvidenceError::TotalConflict(p.conflict));
    }
    let norm = 1.0 - p.conflict;
    let singletons = p.singletons.into_iter().map(|m| m / norm).collect();
    Ok(FusionResult {
        fused: MassVector::from_parts_unchecked(singletons, p.theta / norm),
        conflict: p.conflict,
        rule: Rule::Dempster,
    })
}

/// Yager's rule of combination. Never fails on conflict: conflicting mass is
/// added to `Θ`.
pub fn combine_yager(a: &MassVector, b: &MassVector) -> Result<FusionResult, EvidenceError> {
    let p = conjunctive(a, b)?;
    Ok(FusionResult {
        fused: MassVector::from_parts_unchecked(p.singletons, p.theta + p.conflict),
        conflict: p.conflict,
        rule: Rule::Yager,
    })
}

pub fn combine(a: &MassVector, b: &MassVector, rule: Rule) -> Result<FusionResult, EvidenceError> {
    match rule {
        Rule::Dempster => combine_dempster(a, b),
        Rule::Yager => combine_yager(a, b),
    }
}

/// Left fold `((m1 ⊗ m2) ⊗ m3) ...` in sequence order. The reported conflict
/// is that of the last pairwise step; a single input comes back unchanged
/// with zero conflict.
pub fn combine_many(masses: &[MassVector], rule: Rule) -> Result<FusionResult, EvidenceError> {
    let (fused, conflicts) = fold(masses, rule)?;
    Ok(FusionResult { fused, conflict: conflicts.last().copied().unwrap_or(0.0), rule })
}

/// Like [`combine_many`] but returns the conflict of every pairwise step
/// (`masses.len() - 1` entries).
pub fn combine_many_traced(
    masses: &[MassVector],
    rule: Rule,
) -> Result<(MassVector, Vec<f64>), EvidenceError> {
    fold(masses, rule)
}

fn fold(masses: &[MassVector], rule: Rule) -> Result<(MassVector, Vec<f64>), EvidenceError> {
    let (first, rest) = masses.split_first().ok_or(EvidenceError::EmptySequence)?;
    let mut acc = first.clone();
    let mut conflicts = Vec::with_capacity(rest.len());
    for m in rest {
        let step = combine(&acc, m, rule)?;
        conflicts.push(step.conflict);
        acc = step.fused;
    }
    Ok((acc, conflicts))
}

pub fn vacuous(frame: &Frame) -> MassVector {
    MassVector::vacuous(frame.len())
}

/// Label of the largest singleton mass (see [`MassVector::argmax`]).
pub fn argmax_label<'a>(m: &MassVector, frame: &'a Frame) -> Result<&'a str, EvidenceError> {
    if m.n() != frame.len() {
        return Err(EvidenceError::FrameMismatch { left: m.n(), right: frame.len() });
    }
    Ok(&frame.labels()[m.argmax()])
}
