//! Per-class precision, recall (fault detection rate) and F1, plus the
//! confusion matrix. Undefined ratios (0/0) are reported as 0.

use crate::ANOMALY_CODE;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{truth} truth labels vs {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {0} outside the frame")]
    InvalidLabel(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: i64,
    pub precision: f64,
    /// Also the fault detection rate when the class is a fault.
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Row/column labels of the confusion matrix; the anomaly code comes last
    /// when present.
    pub labels: Vec<i64>,
    pub per_class: Vec<ClassMetrics>,
    /// Averages over classes with non-zero support.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl ClassificationReport {
    pub fn class(&self, label: i64) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Scores predictions over the frame `0..n_classes`, with the anomaly code
/// treated as an extra class whenever it occurs.
pub fn classification_report(
    y_true: &[i64],
    y_pred: &[i64],
    n_classes: usize,
) -> Result<ClassificationReport, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch { truth: y_true.len(), pred: y_pred.len() });
    }
    let mut labels: Vec<i64> = (0..n_classes as i64).collect();
    if y_true.iter().chain(y_pred).any(|&l| l == ANOMALY_CODE) {
        labels.push(ANOMALY_CODE);
    }
    let slot = |l: i64| -> Result<usize, MetricsError> {
        if l == ANOMALY_CODE {
            Ok(n_classes)
        } else if (0..n_classes as i64).contains(&l) {
            Ok(l as usize)
        } else {
            Err(MetricsError::InvalidLabel(l))
        }
    };
    let k = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[slot(t)?][slot(p)?] += 1;
    }

    let per_class: Vec<ClassMetrics> = labels
        .iter()
        .enumerate()
        .map(|(c, &label)| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics { label, precision, recall, f1: f1(precision, recall), support }
        })
        .collect();

    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
        }
    };
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: ratio(correct, y_true.len()),
        labels,
        per_class,
        confusion,
    })
}

/// Per-class F1 over dense labels `0..n_classes`; absent classes score 0.
pub fn per_class_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t < n_classes {
            support[t] += 1;
        }
        if p < n_classes {
            predicted[p] += 1;
        }
        if t == p && t < n_classes {
            tp[t] += 1;
        }
    }
    (0..n_classes)
        .map(|c| f1(ratio(tp[c], predicted[c]), ratio(tp[c], support[c])))
        .collect()
}
