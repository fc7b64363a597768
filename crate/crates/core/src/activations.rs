//! Elementwise activations and their derivatives. Softmax acts row-wise over
//! the last axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Linear,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
    Softmax,
}

impl Activation {
    /// Leaky ReLU with a slope in `(0, 1)`.
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid(format!("leaky slope {slope} outside (0,1)")));
        }
        Ok(Activation::LeakyRelu { slope })
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        match *self {
            Activation::Linear => x.clone(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh_act(x),
            Activation::Relu => relu(x),
            Activation::LeakyRelu { slope } => leaky_relu(x, slope),
            Activation::Softmax => softmax(x),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Softmax => "softmax",
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Softmax over the last axis. The row maximum is subtracted first, so any
/// finite logits are safe.
pub fn softmax(z: &Tensor) -> Tensor {
    let mut out = z.clone();
    let k = z.last_dim();
    if k == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Derivative of a scalar activation evaluated at pre-activation `x`.
/// The ReLU kink uses subgradient 0 (leaky: the slope).
fn derivative(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Linear => 1.0,
        Activation::Sigmoid => {
            let s = sigmoid_scalar(x);
            s * (1.0 - s)
        }
        Activation::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { slope } => {
            if x > 0.0 {
                1.0
            } else {
                slope
            }
        }
        Activation::Softmax => unreachable!("softmax has no elementwise derivative"),
    }
}

/// `upstream ⊙ f'(x)` for the pre-activation `x`. Softmax uses its
/// row-wise Jacobian: `s ⊙ (u - (u · s))`.
pub fn activation_backward(kind: Activation, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.expect_same_shape(x, "activation_backward")?;
    match kind {
        Activation::Linear => Ok(upstream.clone()),
        Activation::Softmax => {
            let mut out = softmax(x);
            let width = x.last_dim().max(1);
            for (s, u) in out.data_mut().chunks_mut(width).zip(upstream.data().chunks(width)) {
                let dot: f64 = s.iter().zip(u).map(|(a, b)| a * b).sum();
                for (si, ui) in s.iter_mut().zip(u) {
                    *si *= ui - dot;
                }
            }
            Ok(out)
        }
        _ => x.zip_map(upstream, |xv, g| g * derivative(kind, xv)),
    }
}
