//! Binary confusion-matrix metrics and a challenge-style submission scorer.
//!
//! `Interesting` is the positive class. Precision or recall with a zero
//! denominator is defined as 0, and F1 is 0 whenever precision and recall
//! are both 0, so every metric is total.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::corpus::{self, CorpusError, Label};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction and gold lengths differ: {predictions} vs {gold}")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("no pairs to evaluate")]
    Empty,
    #[error("line count mismatch: {expected_path} has {expected_lines} lines, {out_path} has {out_lines}")]
    LineCountMismatch { expected_path: PathBuf, expected_lines: usize, out_path: PathBuf, out_lines: usize },
    #[error(transparent)]
    Format(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: Label, gold: Label) {
        match (predicted.is_positive(), gold.is_positive()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion(predictions: &[Label], gold: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch { predictions: predictions.len(), gold: gold.len() });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        cm.add(p, g);
    }
    Ok(cm)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Renders a fraction as a percentage with two decimals, rounding half-up.
pub fn percent(value: f64) -> String {
    format!("{:.2}", (value * 10_000.0 + 0.5).floor() / 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "F1 {}  Acc {}  Prec {}  Rec {}",
            percent(self.f1),
            percent(self.accuracy),
            percent(self.precision),
            percent(self.recall)
        )
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    Ok(MetricsReport { f1: f1_score(precision, recall), accuracy: ratio(cm.tp + cm.tn, total), precision, recall })
}

/// Scores a submission: F1 of `out_path` labels against `expected_path`.
pub fn geval_evaluate(expected_path: &Path, out_path: &Path) -> Result<f64, MetricsError> {
    let expected = corpus::read_labels(expected_path)?;
    let out = corpus::read_labels(out_path)?;
    if expected.len() != out.len() {
        return Err(MetricsError::LineCountMismatch {
            expected_path: expected_path.to_path_buf(),
            expected_lines: expected.len(),
            out_path: out_path.to_path_buf(),
            out_lines: out.len(),
        });
    }
    let report = metrics(&confusion(&out, &expected)?)?;
    Ok(report.f1.clamp(0.0, 1.0))
}

/// The scorer's output line, e.g. `F1: 0.666667`.
pub fn format_f1(f1: f64) -> String {
    format!("F1: {f1:.6}")
}
