//! Parameter-update rules, a step-decay schedule and a scalar
//! gradient-descent driver.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::tensor::Tensor;

/// Update rule plus hyperparameters. Every `eps` sits inside a square root
/// except Adam's, which uses the usual `sqrt(v_hat) + eps` form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `θ -= lr * g`
    Sgd { lr: f64 },
    /// `v = γ v + lr * g; θ -= v`
    Momentum { lr: f64, gamma: f64 },
    /// Momentum with the gradient taken at the lookahead point `θ - γ v`.
    Nesterov { lr: f64, gamma: f64 },
    /// `G += g²; θ -= lr * g / sqrt(G + eps)`
    Adagrad { lr: f64, eps: f64 },
    /// Learning-rate free:
    /// `Δ = -g * sqrt(E[Δ²] + eps) / sqrt(E[g²] + eps)`.
    Adadelta { rho: f64, eps: f64 },
    /// `E[g²] = ρ E[g²] + (1 - ρ) g²; θ -= lr * g / sqrt(E[g²] + eps)`
    Rmsprop { lr: f64, rho: f64, eps: f64 },
    /// Bias-corrected Adam.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn sgd(lr: f64) -> Self {
        OptimizerKind::Sgd { lr }
    }

    pub fn momentum(lr: f64, gamma: f64) -> Self {
        OptimizerKind::Momentum { lr, gamma }
    }

    pub fn nesterov(lr: f64, gamma: f64) -> Self {
        OptimizerKind::Nesterov { lr, gamma }
    }

    /// Adagrad with eps 1e-6.
    pub fn adagrad(lr: f64) -> Self {
        OptimizerKind::Adagrad { lr, eps: 1e-6 }
    }

    /// AdaDelta with rho 0.95 and eps 1e-6.
    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: 0.95,
            eps: 1e-6,
        }
    }

    /// RMSprop with rho 0.9 and eps 1e-8.
    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::Rmsprop {
            lr,
            rho: 0.9,
            eps: 1e-8,
        }
    }

    /// Adam with beta1 0.9, beta2 0.999 and eps 1e-8.
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Momentum { .. } => "momentum",
            OptimizerKind::Nesterov { .. } => "nesterov",
            OptimizerKind::Adagrad { .. } => "adagrad",
            OptimizerKind::Adadelta { .. } => "adadelta",
            OptimizerKind::Rmsprop { .. } => "rmsprop",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    /// The learning rate, for rules that have one.
    pub fn lr(&self) -> Option<f64> {
        match *self {
            OptimizerKind::Sgd { lr }
            | OptimizerKind::Momentum { lr, .. }
            | OptimizerKind::Nesterov { lr, .. }
            | OptimizerKind::Adagrad { lr, .. }
            | OptimizerKind::Rmsprop { lr, .. }
            | OptimizerKind::Adam { lr, .. } => Some(lr),
            OptimizerKind::Adadelta { .. } => None,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(1e-3)
    }
}

/// Per-parameter state. Unused slots stay empty.
#[derive(Clone, Debug, Default)]
struct Slot {
    a: Vec<f64>,
    b: Vec<f64>,
    shape: Vec<usize>,
}

/// An update rule with its per-parameter state, created lazily on the first
/// step and keyed by parameter position.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    slots: Vec<Slot>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            slots: Vec::new(),
            t: 0,
        }
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    /// Number of completed steps.
    pub fn iterations(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> Option<f64> {
        self.kind.lr()
    }

    /// Replaces the learning rate; AdaDelta has none to replace.
    pub fn set_lr(&mut self, new_lr: f64) -> Result<()> {
        match &mut self.kind {
            OptimizerKind::Sgd { lr }
            | OptimizerKind::Momentum { lr, .. }
            | OptimizerKind::Nesterov { lr, .. }
            | OptimizerKind::Adagrad { lr, .. }
            | OptimizerKind::Rmsprop { lr, .. }
            | OptimizerKind::Adam { lr, .. } => {
                *lr = new_lr;
                Ok(())
            }
            OptimizerKind::Adadelta { .. } => {
                Err(Error::Unsupported("adadelta has no learning rate".into()))
            }
        }
    }

    /// Drops all accumulated state.
    pub fn reset(&mut self) {
        self.slots.clear();
        self.t = 0;
    }

    /// One update of every trainable parameter from its stored gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        self.begin(params.len());
        for (i, p) in params.iter_mut().enumerate() {
            if p.trainable {
                let Param { value, grad, .. } = &mut **p;
                self.update(i, value, grad)?;
            }
        }
        Ok(())
    }

    /// One update over bare tensors.
    pub fn step_tensors(&mut self, values: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if values.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                values.len(),
                grads.len()
            )));
        }
        self.begin(values.len());
        for (i, (v, g)) in values.iter_mut().zip(grads).enumerate() {
            self.update(i, v, g)?;
        }
        Ok(())
    }

    fn begin(&mut self, n: usize) {
        if self.slots.len() < n {
            self.slots.resize_with(n, Slot::default);
        }
        self.t += 1;
    }

    fn update(&mut self, index: usize, value: &mut Tensor, grad: &Tensor) -> Result<()> {
        value.expect_same_shape(grad, "optimizer step")?;
        let slot = &mut self.slots[index];
        if slot.shape.is_empty() && slot.a.is_empty() {
            slot.shape = value.shape().to_vec();
            slot.a = vec![0.0; value.len()];
            slot.b = vec![0.0; value.len()];
        } else if slot.shape != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer state",
                left: slot.shape.clone(),
                right: value.shape().to_vec(),
            });
        }
        let t = self.t as i32;
        let theta = value.data_mut();
        let g = grad.data();
        let (a, b) = (&mut slot.a, &mut slot.b);
        match self.kind {
            OptimizerKind::Sgd { lr } => {
                for (th, &gi) in theta.iter_mut().zip(g) {
                    *th -= lr * gi;
                }
            }
            OptimizerKind::Momentum { lr, gamma } => {
                for k in 0..theta.len() {
                    a[k] = gamma * a[k] + lr * g[k];
                    theta[k] -= a[k];
                }
            }
            OptimizerKind::Nesterov { lr, gamma } => {
                // theta holds the lookahead point phi = θ - γ v, so the
                // gradient was already evaluated there.
                for k in 0..theta.len() {
                    let v_old = a[k];
                    a[k] = gamma * v_old + lr * g[k];
                    theta[k] = theta[k] - (1.0 + gamma) * a[k] + gamma * v_old;
                }
            }
            OptimizerKind::Adagrad { lr, eps } => {
                for k in 0..theta.len() {
                    a[k] += g[k] * g[k];
                    theta[k] -= lr * g[k] / (a[k] + eps).sqrt();
                }
            }
            OptimizerKind::Adadelta { rho, eps } => {
                for k in 0..theta.len() {
                    a[k] = rho * a[k] + (1.0 - rho) * g[k] * g[k];
                    let delta = -g[k] * (b[k] + eps).sqrt() / (a[k] + eps).sqrt();
                    b[k] = rho * b[k] + (1.0 - rho) * delta * delta;
                    theta[k] += delta;
                }
            }
            OptimizerKind::Rmsprop { lr, rho, eps } => {
                for k in 0..theta.len() {
                    a[k] = rho * a[k] + (1.0 - rho) * g[k] * g[k];
                    theta[k] -= lr * g[k] / (a[k] + eps).sqrt();
                }
            }
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for k in 0..theta.len() {
                    a[k] = beta1 * a[k] + (1.0 - beta1) * g[k];
                    b[k] = beta2 * b[k] + (1.0 - beta2) * g[k] * g[k];
                    let m_hat = a[k] / c1;
                    let v_hat = b[k] / c2;
                    theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// `lr0 * drop^floor(epoch / every)`.
pub fn step_decay(lr0: f64, drop: f64, every: usize, epoch: usize) -> Result<f64> {
    if !(drop > 0.0 && drop <= 1.0) || every == 0 {
        return Err(Error::invalid(format!(
            "step decay needs drop in (0,1] and every >= 1, got {drop}, {every}"
        )));
    }
    Ok(lr0 * drop.powi((epoch / every) as i32))
}

/// Iterates and objective values of a scalar gradient-descent run.
#[derive(Clone, Debug, PartialEq)]
pub struct GDTrace {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
}

impl GDTrace {
    pub fn final_x(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn final_y(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    /// CSV with columns `iter,x,f`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,x,f\n");
        for (i, (x, y)) in self.xs.iter().zip(&self.ys).enumerate() {
            writeln!(out, "{i},{x},{y}").unwrap();
        }
        out
    }
}

/// Fixed-step descent `x <- x - alpha * f'(x)`, run while
/// `|f'(x)| > tol` and fewer than `max_iter` steps were taken.
///
/// A non-finite iterate stops the run with `diverged` set; the trace keeps
/// only finite points.
pub fn gd_scalar(
    f: impl Fn(f64) -> f64,
    fprime: impl Fn(f64) -> f64,
    x0: f64,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GDTrace> {
    if alpha <= 0.0 || !x0.is_finite() {
        return Err(Error::invalid(format!(
            "gd_scalar needs alpha > 0 and a finite start, got {alpha}, {x0}"
        )));
    }
    let mut x = x0;
    let mut p = -fprime(x);
    let mut trace = GDTrace {
        xs: vec![x],
        ys: vec![f(x)],
        converged: false,
        diverged: false,
        iterations: 0,
    };
    while p.abs() > tol && trace.iterations < max_iter {
        let next = x + alpha * p;
        let y = f(next);
        if !next.is_finite() || !y.is_finite() {
            trace.diverged = true;
            return Ok(trace);
        }
        x = next;
        p = -fprime(x);
        trace.iterations += 1;
        trace.xs.push(x);
        trace.ys.push(y);
    }
    trace.converged = p.abs() <= tol;
    Ok(trace)
}
