//! Fused ensemble prediction and uncertainty-gated anomaly detection.

use crate::classifier::{ClassifierError, TrainedClassifier};
use crate::evidence::{combine_many, EvidenceError, Frame, MassVector, Rule};
use crate::parallel::{try_map_indices, Execution};
use crate::transform::SensitivityFactor;
use crate::ANOMALY_CODE;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label appended to a frame for the anomaly bucket.
pub const ANOMALY_LABEL: &str = "A1";

pub const DEFAULT_Q_MIN: f64 = 0.5;
pub const DEFAULT_Q_MAX: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble needs at least two classifiers, got {0}")]
    PoolTooSmall(usize),
    #[error("classifier `{name}` has {classes} classes, frame has {frame}")]
    FrameMismatch { name: String, classes: usize, frame: usize },
    #[error("calibration needs at least one validation row")]
    EmptyValidation,
    #[error("quantiles must satisfy 0 <= q_min < q_max <= 1, got ({0}, {1})")]
    InvalidQuantiles(f64, f64),
    #[error("thresholds must satisfy min <= max within [0, 1]")]
    InvalidThresholds,
    #[error("ensemble has no calibrated thresholds")]
    NotCalibrated,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
}

/// Per-rule bounds on fusion conflict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyThresholds {
    pub d_min: f64,
    pub d_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl AnomalyThresholds {
    pub fn new(d_min: f64, d_max: f64, y_min: f64, y_max: f64) -> Result<Self, EnsembleError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if [d_min, d_max, y_min, y_max].into_iter().all(unit) && d_min <= d_max && y_min <= y_max {
            Ok(Self { d_min, d_max, y_min, y_max })
        } else {
            Err(EnsembleError::InvalidThresholds)
        }
    }
}

/// Outcome of fusing one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    /// Frame index.
    pub label: usize,
    /// `None` when Dempster's rule hit total conflict.
    pub fused_dempster: Option<MassVector>,
    pub fused_yager: MassVector,
    pub u_d: f64,
    pub u_y: f64,
    /// Each member's own prediction, in pool order.
    pub member_labels: Vec<usize>,
}

impl EnsembleDecision {
    /// Folds `masses` in order under both rules. The label comes from
    /// `label_rule`, falling back to Yager when Dempster totally conflicts.
    pub fn from_evidence(masses: &[MassVector], label_rule: Rule) -> Result<Self, EvidenceError> {
        let yager = combine_many(masses, Rule::Yager)?;
        let (fused_dempster, u_d) = match combine_many(masses, Rule::Dempster) {
            Ok(r) => (Some(r.fused), r.conflict),
            Err(EvidenceError::TotalConflict(_)) => (None, 1.0),
            Err(e) => return Err(e),
        };
        let label = match (&fused_dempster, label_rule) {
            (Some(d), Rule::Dempster) => d.argmax(),
            _ => yager.fused.argmax(),
        };
        Ok(Self {
            label,
            fused_dempster,
            fused_yager: yager.fused,
            u_d: u_d.clamp(0.0, 1.0),
            u_y: yager.conflict.clamp(0.0, 1.0),
            member_labels: Vec::new(),
        })
    }

    pub fn total_conflict(&self) -> bool {
        self.fused_dempster.is_none()
    }
}

/// Which branch of the detection rule fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Both conflicts under their minimum thresholds.
    BelowMin,
    /// Both conflicts over their maximum thresholds.
    AboveMax,
    Between,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::BelowMin => "below_min",
            Branch::AboveMax => "above_max",
            Branch::Between => "between",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Known(usize),
    Anomaly,
}

impl Prediction {
    /// Integer code for reporting; anomalies map to [`ANOMALY_CODE`].
    pub fn code(self) -> i64 {
        match self {
            Prediction::Known(c) => c as i64,
            Prediction::Anomaly => ANOMALY_CODE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDecision {
    pub label: Prediction,
    pub branch: Branch,
    pub basis: EnsembleDecision,
}

pub fn classify_uncertainty(u_d: f64, u_y: f64, t: &AnomalyThresholds) -> Branch {
    if u_d < t.d_min && u_y < t.y_min {
        Branch::BelowMin
    } else if u_d > t.d_max && u_y > t.y_max {
        Branch::AboveMax
    } else {
        Branch::Between
    }
}

/// Applies the detection rule to an existing decision.
pub fn decide(basis: EnsembleDecision, t: &AnomalyThresholds) -> AnomalyDecision {
    let branch = classify_uncertainty(basis.u_d, basis.u_y, t);
    let label = match branch {
        Branch::AboveMax => Prediction::Anomaly,
        Branch::BelowMin | Branch::Between => Prediction::Known(basis.label),
    };
    AnomalyDecision { label, branch, basis }
}

/// Appends the anomaly label unless it is already present.
pub fn extend_frame(frame: &Frame) -> Frame {
    if frame.index_of(ANOMALY_LABEL).is_some() {
        return frame.clone();
    }
    let mut labels = frame.labels().to_vec();
    labels.push(ANOMALY_LABEL.to_string());
    Frame::new(labels).expect("appending a fresh label keeps the frame valid")
}

/// Linearly interpolated sample quantile (`(n-1)q` positioning).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Selected pool plus everything needed to fuse and gate predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub pool: Vec<TrainedClassifier>,
    pub frame: Frame,
    pub sensitivity: SensitivityFactor,
    pub label_rule: Rule,
    pub thresholds: Option<AnomalyThresholds>,
}

impl EnsembleModel {
    pub fn new(pool: Vec<TrainedClassifier>, frame: Frame, sensitivity: SensitivityFactor) -> Result<Self, EnsembleError> {
        if pool.len() < 2 {
            return Err(EnsembleError::PoolTooSmall(pool.len()));
        }
        if let Some(c) = pool.iter().find(|c| c.n_classes() != frame.len()) {
            return Err(EnsembleError::FrameMismatch {
                name: c.name().to_string(),
                classes: c.n_classes(),
                frame: frame.len(),
            });
        }
        Ok(Self { pool, frame, sensitivity, label_rule: Rule::Dempster, thresholds: None })
    }

    pub fn with_label_rule(mut self, rule: Rule) -> Self {
        self.label_rule = rule;
        self
    }

    pub fn with_thresholds(mut self, thresholds: AnomalyThresholds) -> Self {
        self.thresholds = Some(thresholds);
        self
    }

    /// Each member's mass vector and predicted class for one row.
    pub fn member_evidence(&self, row: &[f64]) -> Result<Vec<(MassVector, usize)>, EnsembleError> {
        self.pool
            .iter()
            .map(|c| c.evidence_row(row, self.sensitivity).map_err(EnsembleError::from))
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> Result<EnsembleDecision, EnsembleError> {
        let (masses, labels): (Vec<MassVector>, Vec<usize>) = self.member_evidence(row)?.into_iter().unzip();
        let mut decision = EnsembleDecision::from_evidence(&masses, self.label_rule)?;
        decision.member_labels = labels;
        Ok(decision)
    }

    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Vec<EnsembleDecision>, EnsembleError> {
        self.predict_batch_with(x, Execution::default())
    }

    pub fn predict_batch_with(&self, x: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<EnsembleDecision>, EnsembleError> {
        let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
        try_map_indices(rows.len(), exec, |i| self.predict(&rows[i]))
    }

    /// Thresholds from the `q_min` and `q_max` quantiles of the validation
    /// conflicts under each rule.
    pub fn calibrate_thresholds(
        &self,
        x_va: ArrayView2<'_, f64>,
        q_min: f64,
        q_max: f64,
        exec: Execution,
    ) -> Result<AnomalyThresholds, EnsembleError> {
        if !(0.0..=1.0).contains(&q_min) || !(0.0..=1.0).contains(&q_max) || q_min >= q_max {
            return Err(EnsembleError::InvalidQuantiles(q_min, q_max));
        }
        if x_va.nrows() == 0 {
            return Err(EnsembleError::EmptyValidation);
        }
        let decisions = self.predict_batch_with(x_va, exec)?;
        let u_d: Vec<f64> = decisions.iter().map(|d| d.u_d).collect();
        let u_y: Vec<f64> = decisions.iter().map(|d| d.u_y).collect();
        let q = |v: &[f64], p| quantile(v, p).expect("non-empty series and valid quantile");
        AnomalyThresholds::new(q(&u_d, q_min), q(&u_d, q_max), q(&u_y, q_min), q(&u_y, q_max))
    }

    /// Calibrates and stores the thresholds.
    pub fn calibrate(&mut self, x_va: ArrayView2<'_, f64>, q_min: f64, q_max: f64, exec: Execution) -> Result<AnomalyThresholds, EnsembleError> {
        let t = self.calibrate_thresholds(x_va, q_min, q_max, exec)?;
        self.thresholds = Some(t);
        Ok(t)
    }

    pub fn detect(&self, row: &[f64]) -> Result<AnomalyDecision, EnsembleError> {
        let t = self.thresholds.ok_or(EnsembleError::NotCalibrated)?;
        Ok(decide(self.predict(row)?, &t))
    }

    pub fn detect_batch(&self, x: ArrayView2<'_, f64>, exec: Execution) -> Result<Vec<AnomalyDecision>, EnsembleError> {
        let t = self.thresholds.ok_or(EnsembleError::NotCalibrated)?;
        Ok(self.predict_batch_with(x, exec)?.into_iter().map(|d| decide(d, &t)).collect())
    }

    /// Frame including the anomaly bucket.
    pub fn anomaly_frame(&self) -> Frame {
        extend_frame(&self.frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(row: &[f64]) -> MassVector {
        MassVector::from_slice(row).unwrap()
    }

    fn decision(u_d: f64, u_y: f64) -> EnsembleDecision {
        EnsembleDecision {
            label: 1,
            fused_dempster: Some(MassVector::vacuous(2)),
            fused_yager: MassVector::vacuous(2),
            u_d,
            u_y,
            member_labels: vec![],
        }
    }

    #[test]
    fn agreement_has_no_conflict() {
        let masses = vec![MassVector::certain(3, 2); 4];
        let d = EnsembleDecision::from_evidence(&masses, Rule::Dempster).unwrap();
        assert_eq!(d.label, 2);
        assert_eq!((d.u_d, d.u_y), (0.0, 0.0));
        assert_eq!(d.fused_dempster.unwrap().to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn worked_pair() {
        let d = EnsembleDecision::from_evidence(&[mv(&[0.6, 0.3, 0.1]), mv(&[0.5, 0.4, 0.1])], Rule::Dempster).unwrap();
        assert_eq!(d.label, 0);
        assert!((d.u_d - 0.39).abs() < 1e-12);
        assert!((d.u_y - 0.39).abs() < 1e-12);
        let f = d.fused_dempster.unwrap();
        assert!((f.singleton(0) - 0.41 / 0.61).abs() < 1e-12);
        assert!((d.fused_yager.theta() - 0.40).abs() < 1e-12);
    }

    #[test]
    fn vacuous_pool() {
        let d = EnsembleDecision::from_evidence(&[MassVector::vacuous(3), MassVector::vacuous(3)], Rule::Dempster).unwrap();
        assert_eq!(d.label, 0);
        assert_eq!((d.u_d, d.u_y), (0.0, 0.0));
        assert_eq!(d.fused_dempster.unwrap(), MassVector::vacuous(3));
    }

    #[test]
    fn total_conflict_falls_back_to_yager() {
        let d = EnsembleDecision::from_evidence(&[MassVector::certain(2, 0), MassVector::certain(2, 1)], Rule::Dempster).unwrap();
        assert!(d.total_conflict());
        assert_eq!(d.u_d, 1.0);
        assert_eq!(d.u_y, 1.0);
        assert_eq!(d.fused_yager, MassVector::vacuous(2));
    }

    #[test]
    fn three_branches() {
        let t = AnomalyThresholds::new(0.1, 0.5, 0.1, 0.5).unwrap();
        assert_eq!(decide(decision(0.0, 0.0), &t).label, Prediction::Known(1));
        assert_eq!(decide(decision(0.0, 0.0), &t).branch, Branch::BelowMin);
        let a = decide(decision(0.9, 0.9), &t);
        assert_eq!((a.label, a.branch), (Prediction::Anomaly, Branch::AboveMax));
        assert_eq!(a.label.code(), -1);
        let b = decide(decision(0.9, 0.1), &t);
        assert_eq!((b.label, b.branch), (Prediction::Known(1), Branch::Between));
        // Equality with a threshold is not an exceedance.
        assert_eq!(classify_uncertainty(0.5, 0.9, &t), Branch::Between);
        assert_eq!(classify_uncertainty(0.1, 0.0, &t), Branch::Between);
    }

    #[test]
    fn thresholds_validated() {
        assert!(AnomalyThresholds::new(0.6, 0.5, 0.1, 0.2).is_err());
        assert!(AnomalyThresholds::new(0.1, 1.5, 0.1, 0.2).is_err());
        assert!(AnomalyThresholds::new(0.2, 0.2, 0.2, 0.2).is_ok());
    }

    #[test]
    fn frame_extension() {
        let f = Frame::new(["F0", "F1"]).unwrap();
        let e = extend_frame(&f);
        assert_eq!(e.labels(), ["F0", "F1", "A1"]);
        assert_eq!(extend_frame(&e), e);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[0.2; 7], 0.5), Some(0.2));
        assert_eq!(quantile(&[0.2; 7], 0.99), Some(0.2));
        let series: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        // (n-1)q = 98.01 -> between 0.98 and 0.99.
        assert!((quantile(&series, 0.99).unwrap() - 0.9801).abs() < 1e-12);
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[], 0.5), None);
        assert_eq!(quantile(&[1.0], 1.5), None);
    }
}
