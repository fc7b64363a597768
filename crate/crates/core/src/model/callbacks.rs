use std::path::PathBuf;

use super::{EpochLog, SequentialModel};
use crate::error::{Error, Result};
use crate::optim::step_decay;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Hooks run by [`SequentialModel::fit`] after the epoch has been recorded
/// in the history.
pub trait Callback {
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control>;

    fn on_train_end(&mut self, _model: &mut SequentialModel) -> Result<()> {
        Ok(())
    }
}

/// A monitored quantity; lower is better for both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monitor {
    Loss,
    ValLoss,
}

impl Monitor {
    fn read(self, log: &EpochLog) -> Result<f64> {
        match self {
            Monitor::Loss => Ok(log.loss),
            Monitor::ValLoss => log
                .val_loss
                .ok_or_else(|| Error::invalid("val_loss monitored but the fit has no validation data")),
        }
    }
}

/// Stops training after `patience` consecutive epochs whose monitored value
/// failed to drop more than `min_delta` below the best so far.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub monitor: Monitor,
    pub min_delta: f64,
    pub patience: usize,
    /// Reload the best epoch's weights when training ends.
    pub restore_best: bool,
    best: f64,
    best_epoch: usize,
    wait: usize,
    best_weights: Option<Vec<Tensor>>,
    stopped_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, min_delta: f64, patience: usize, restore_best: bool) -> Self {
        Self {
            monitor,
            min_delta,
            patience,
            restore_best,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
            best_weights: None,
            stopped_epoch: None,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn stopped_epoch(&self) -> Option<usize> {
        self.stopped_epoch
    }
}

impl Callback for EarlyStopping {
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control> {
        let current = self.monitor.read(log)?;
        if current < self.best - self.min_delta {
            self.best = current;
            self.best_epoch = log.epoch;
            self.wait = 0;
            if self.restore_best {
                self.best_weights = Some(model.weights());
            }
            return Ok(Control::Continue);
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.stopped_epoch = Some(log.epoch);
            return Ok(Control::Stop);
        }
        Ok(Control::Continue)
    }

    fn on_train_end(&mut self, model: &mut SequentialModel) -> Result<()> {
        if let Some(w) = self.best_weights.take() {
            model.set_weights(&w)?;
        }
        Ok(())
    }
}

/// Saves the model to a path built from a pattern such as
/// `weights_epoch_{epoch:03d}_loss_{loss:.4f}.gbk`. Supported fields are
/// `epoch`, `loss` and `val_loss`, with optional `0Nd` / `.Nf` formats.
///
/// With `save_best_only`, a file is written only when the monitored value
/// improves; an improved epoch whose path collides with an earlier file
/// overwrites it.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub pattern: String,
    pub monitor: Monitor,
    pub save_best_only: bool,
    best: f64,
    saved: Vec<PathBuf>,
}

impl ModelCheckpoint {
    pub fn new(pattern: impl Into<String>, monitor: Monitor, save_best_only: bool) -> Self {
        Self {
            pattern: pattern.into(),
            monitor,
            save_best_only,
            best: f64::INFINITY,
            saved: Vec::new(),
        }
    }

    /// Every path written so far, in order.
    pub fn saved(&self) -> &[PathBuf] {
        &self.saved
    }

    pub fn render(&self, log: &EpochLog) -> Result<PathBuf> {
        render_pattern(&self.pattern, log).map(PathBuf::from)
    }
}

impl Callback for ModelCheckpoint {
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control> {
        let current = self.monitor.read(log)?;
        if self.save_best_only && current >= self.best {
            return Ok(Control::Continue);
        }
        self.best = self.best.min(current);
        let path = self.render(log)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        model.save(&path)?;
        self.saved.push(path);
        Ok(Control::Continue)
    }
}

fn render_pattern(pattern: &str, log: &EpochLog) -> Result<String> {
    let mut out = String::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::invalid(format!("unclosed field in {pattern:?}")))?
            + open;
        let field = &rest[open + 1..close];
        let (name, fmt) = field.split_once(':').unwrap_or((field, ""));
        let value = match name {
            "epoch" => log.epoch as f64,
            "loss" => log.loss,
            "val_loss" => log
                .val_loss
                .ok_or_else(|| Error::invalid("val_loss in pattern without validation"))?,
            _ => return Err(Error::invalid(format!("unknown field {{{name}}} in {pattern:?}"))),
        };
        out.push_str(&format_field(value, name == "epoch", fmt)?);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn format_field(value: f64, integer: bool, fmt: &str) -> Result<String> {
    let bad = || Error::invalid(format!("unsupported format spec {fmt:?}"));
    if fmt.is_empty() {
        return Ok(if integer {
            format!("{}", value as i64)
        } else {
            format!("{value}")
        });
    }
    if let Some(width) = fmt.strip_suffix('d') {
        let w: usize = width.trim_start_matches('0').parse().or_else(|_| {
            if width.chars().all(|c| c == '0') {
                Ok(0)
            } else {
                Err(bad())
            }
        })?;
        return Ok(format!("{:0w$}", value as i64));
    }
    if let Some(prec) = fmt.strip_prefix('.').and_then(|p| p.strip_suffix('f')) {
        let p: usize = prec.parse().map_err(|_| bad())?;
        return Ok(format!("{value:.p$}"));
    }
    Err(bad())
}

/// Runs a closure on epochs 1, 1 + every, 1 + 2 * every, ...
pub struct Periodic<F> {
    pub every: usize,
    f: F,
}

impl<F> Periodic<F>
where
    F: FnMut(&EpochLog, &mut SequentialModel) -> Result<()>,
{
    pub fn new(every: usize, f: F) -> Self {
        Self {
            every: every.max(1),
            f,
        }
    }
}

impl<F> Callback for Periodic<F>
where
    F: FnMut(&EpochLog, &mut SequentialModel) -> Result<()>,
{
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control> {
        if (log.epoch - 1).is_multiple_of(self.every) {
            (self.f)(log, model)?;
        }
        Ok(Control::Continue)
    }
}

/// Sets the compiled optimizer's learning rate for the next epoch to
/// `step_decay(lr0, drop, every, completed_epochs)`.
#[derive(Clone, Debug)]
pub struct LrStepDecay {
    pub lr0: f64,
    pub drop: f64,
    pub every: usize,
}

impl Callback for LrStepDecay {
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control> {
        let lr = step_decay(self.lr0, self.drop, self.every, log.epoch)?;
        model.optimizer_mut().ok_or(Error::NotCompiled)?.set_lr(lr)?;
        Ok(Control::Continue)
    }
}
