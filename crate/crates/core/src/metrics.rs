//! Confusion-matrix metrics for binary classification, plus multi-class
//! accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities strictly above this count as the positive class.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// A metric value. Undefined metrics (zero denominator) report 0 with
/// `defined == false`, never NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub defined: bool,
}

impl MetricValue {
    fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            MetricValue {
                value: 0.0,
                defined: false,
            }
        } else {
            MetricValue {
                value: num / den,
                defined: true,
            }
        }
    }
}

fn as_bit(v: f64, which: &str, i: usize) -> Result<bool> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        _ => Err(Error::invalid(format!("{which}[{i}] = {v} is not 0 or 1"))),
    }
}

pub fn confusion(y_true: &[f64], y_pred: &[f64]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        match (as_bit(t, "y_true", i)?, as_bit(p, "y_pred", i)?) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (true, false) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> MetricValue {
        MetricValue::ratio((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> MetricValue {
        MetricValue::ratio(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> MetricValue {
        MetricValue::ratio(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn f1(&self) -> MetricValue {
        let (p, r) = (self.precision(), self.recall());
        if !p.defined || !r.defined {
            return MetricValue {
                value: 0.0,
                defined: false,
            };
        }
        MetricValue::ratio(2.0 * p.value * r.value, p.value + r.value)
    }
}

/// Maps probabilities to {0, 1} with [`THRESHOLD`].
pub fn binarize(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if p > THRESHOLD { 1.0 } else { 0.0 })
        .collect()
}

/// Fraction of exactly matching labels.
pub fn multiclass_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Ok(0.0);
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Metrics a compiled model can track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Thresholded accuracy for sigmoid outputs, argmax accuracy otherwise.
    Accuracy,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
        }
    }
}
