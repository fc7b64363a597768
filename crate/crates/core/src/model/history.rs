use std::fmt::Write as _;

use super::Evaluation;

/// Values recorded at the end of one epoch (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: Vec<f64>,
    pub val_loss: Option<f64>,
    pub val_metrics: Vec<f64>,
}

impl EpochLog {
    pub(crate) fn new(epoch: usize, train: &Evaluation, valid: Option<&Evaluation>) -> Self {
        Self {
            epoch,
            loss: train.loss,
            metrics: train.metrics.iter().map(|m| m.1).collect(),
            val_loss: valid.map(|v| v.loss),
            val_metrics: valid.map_or(Vec::new(), |v| v.metrics.iter().map(|m| m.1).collect()),
        }
    }

    /// Looks up `loss`, `val_loss`, a metric name or `val_<metric>`.
    pub fn get(&self, key: &str, metric_names: &[String]) -> Option<f64> {
        match key {
            "loss" => Some(self.loss),
            "val_loss" => self.val_loss,
            _ => {
                if let Some(name) = key.strip_prefix("val_") {
                    let i = metric_names.iter().position(|m| m == name)?;
                    self.val_metrics.get(i).copied()
                } else {
                    let i = metric_names.iter().position(|m| m == key)?;
                    self.metrics.get(i).copied()
                }
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub metric_names: Vec<String>,
    pub has_validation: bool,
    pub epochs: Vec<EpochLog>,
}

impl History {
    pub fn new(metric_names: Vec<String>, has_validation: bool) -> Self {
        Self {
            metric_names,
            has_validation,
            epochs: Vec::new(),
        }
    }

    pub fn push(&mut self, log: EpochLog) {
        self.epochs.push(log);
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }

    /// One series per column, e.g. `"loss"` or `"val_accuracy"`.
    pub fn series(&self, key: &str) -> Vec<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.get(key, &self.metric_names))
            .collect()
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["epoch".to_string(), "loss".to_string()];
        cols.extend(self.metric_names.iter().cloned());
        if self.has_validation {
            cols.push("val_loss".into());
            cols.extend(self.metric_names.iter().map(|m| format!("val_{m}")));
        }
        cols
    }

    /// `epoch,loss,<metrics>,val_loss,<val_metrics>`; validation columns are
    /// present only when the fit had validation data.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns().join(",");
        out.push('\n');
        for e in &self.epochs {
            write!(out, "{},{}", e.epoch, e.loss).unwrap();
            for m in &e.metrics {
                write!(out, ",{m}").unwrap();
            }
            if self.has_validation {
                write!(out, ",{}", e.val_loss.unwrap_or(f64::NAN)).unwrap();
                for m in &e.val_metrics {
                    write!(out, ",{m}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}
