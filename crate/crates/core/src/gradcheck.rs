//! Central-difference gradient checks for layers and models.
//!
//! Layers are checked through the scalar `L = sum(forward(x) * r)` for a
//! fixed random `r`, whose output gradient is exactly `r`. Forward passes use
//! [`Mode::Frozen`] so that stateful layers do not drift between probes.

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::losses::Loss;
use crate::model::SequentialModel;
use crate::tensor::{Rng, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest discrepancy found and where it was.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, what: &str, analytic: &Tensor, numeric: &Tensor) {
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = what.to_string();
        }
    }
}

/// `||a - b|| / max(||a|| + ||b||, 1e-12)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / (a.norm() + b.norm()).max(1e-12)
}

/// Central differences of `f` at every element of `x`.
pub fn numeric_gradient(
    x: &Tensor,
    h: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<Tensor> {
    let mut g = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Compares a built layer's backward pass against central differences for
/// its input (unless `skip_input`, e.g. integer ids) and every parameter.
pub fn check_layer(layer: &mut dyn Layer, x: &Tensor, rng: &mut Rng, skip_input: bool) -> Result<GradReport> {
    let out = layer.forward(x, Mode::Frozen)?;
    let r = Tensor::rand_normal(rng, out.shape(), 0.0, 1.0);
    let dx = layer.backward(&r)?;
    let grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();
    let mut report = GradReport::new();
    if !skip_input {
        let numeric = numeric_gradient(x, DEFAULT_STEP, |xp| Ok(dot(&layer.forward(xp, Mode::Frozen)?, &r)))?;
        report.record("input", &dx, &numeric);
    }
    for (i, analytic) in grads.iter().enumerate() {
        if !layer.params()[i].trainable {
            continue;
        }
        let name = layer.params()[i].name.clone();
        let value = layer.params()[i].value.clone();
        let numeric = numeric_gradient(&value, DEFAULT_STEP, |v| {
            layer.params_mut()[i].value = v.clone();
            Ok(dot(&layer.forward(x, Mode::Frozen)?, &r))
        })?;
        layer.params_mut()[i].value = value;
        report.record(&name, analytic, &numeric);
    }
    Ok(report)
}

/// Checks the full model gradient of `loss(model(x), y)`, including the
/// fused cross-entropy path, for the input and every trainable parameter.
pub fn check_model(model: &mut SequentialModel, x: &Tensor, y: &Tensor, loss: Loss) -> Result<GradReport> {
    let out = model.forward(x, Mode::Frozen)?;
    let lv = loss.evaluate(y, &out)?;
    let dx = model.backward(&lv.grad, loss.is_fused())?;
    let mut report = GradReport::new();
    let numeric = numeric_gradient(x, DEFAULT_STEP, |xp| {
        Ok(loss.evaluate(y, &model.forward(xp, Mode::Frozen)?)?.value)
    })?;
    report.record("input", &dx, &numeric);
    let analytic: Vec<(String, bool, Tensor)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.trainable, p.grad.clone()))
        .collect();
    for (i, (name, trainable, grad)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let value = model.params()[i].value.clone();
        let numeric = numeric_gradient(&value, DEFAULT_STEP, |v| {
            model.params_mut()[i].value = v.clone();
            Ok(loss.evaluate(y, &model.forward(x, Mode::Frozen)?)?.value)
        })?;
        model.params_mut()[i].value = value;
        report.record(&format!("param {i} ({name})"), grad, &numeric);
    }
    Ok(report)
}
