//! Loss functions. Every loss is a batch mean and returns its gradient
//! alongside the value.
//!
//! The two cross-entropies are fused with their output activation: the
//! returned gradient is taken with respect to the pre-activation logits,
//! which reduces to `(ŷ - y) / n`.

use serde::{Deserialize, Serialize};

use crate::activations::{sigmoid, softmax};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probability clamp applied before taking logarithms.
pub const EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    Mae,
    /// Softmax output + cross-entropy against one-hot rows.
    CategoricalCrossentropy,
    /// Sigmoid output + elementwise binary cross-entropy.
    BinaryCrossentropy,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Mse => "mse",
            Loss::Mae => "mae",
            Loss::CategoricalCrossentropy => "categorical_crossentropy",
            Loss::BinaryCrossentropy => "binary_crossentropy",
        }
    }

    /// Evaluates the loss on model outputs (probabilities for the fused
    /// kinds). For the fused kinds the gradient is w.r.t. the logits.
    pub fn evaluate(&self, y: &Tensor, output: &Tensor) -> Result<LossValue> {
        match self {
            Loss::Mse => mse(y, output),
            Loss::Mae => mae(y, output),
            Loss::CategoricalCrossentropy => categorical_crossentropy_probs(output, y),
            Loss::BinaryCrossentropy => binary_crossentropy(output, y),
        }
    }

    pub fn is_fused(&self) -> bool {
        matches!(self, Loss::CategoricalCrossentropy | Loss::BinaryCrossentropy)
    }
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

fn check_shapes(y: &Tensor, yhat: &Tensor, op: &'static str) -> Result<()> {
    if y.shape() != yhat.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: y.shape().to_vec(),
            right: yhat.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn mse(y: &Tensor, yhat: &Tensor) -> Result<LossValue> {
    check_shapes(y, yhat, "mse")?;
    let n = y.len() as f64;
    let value = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    let grad = yhat.zip_map(y, |p, t| 2.0 * (p - t) / n)?;
    Ok(LossValue { value, grad })
}

/// Mean absolute error; `sign(0)` is taken as 0 in the gradient.
pub fn mae(y: &Tensor, yhat: &Tensor) -> Result<LossValue> {
    check_shapes(y, yhat, "mae")?;
    let n = y.len() as f64;
    let value = y
        .data()
        .iter()
        .zip(yhat.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let grad = yhat.zip_map(y, |p, t| {
        let d = p - t;
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        s / n
    })?;
    Ok(LossValue { value, grad })
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    let k = y.last_dim();
    for (r, row) in y.data().chunks(k).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::invalid(format!("target row {r} is not one-hot")));
        }
    }
    Ok(())
}

/// Cross-entropy of `softmax(logits)` against one-hot targets, averaged over
/// rows (all leading positions). Gradient is w.r.t. the logits.
pub fn softmax_crossentropy(logits: &Tensor, y_onehot: &Tensor) -> Result<LossValue> {
    check_shapes(y_onehot, logits, "softmax_crossentropy")?;
    check_one_hot(y_onehot)?;
    let k = logits.last_dim();
    let rows = logits.len() / k;
    let mut value = 0.0;
    for (z, t) in logits.data().chunks(k).zip(y_onehot.data().chunks(k)) {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let target = t.iter().position(|&v| v == 1.0).unwrap_or(0);
        value += lse - z[target];
    }
    value /= rows as f64;
    let p = softmax(logits);
    let grad = p.zip_map(y_onehot, |pi, yi| (pi - yi) / rows as f64)?;
    Ok(LossValue { value, grad })
}

/// Same loss as [`softmax_crossentropy`] but starting from probabilities
/// (the output of a softmax layer). Probabilities are clamped to
/// `[EPSILON, 1]` before the log.
pub fn categorical_crossentropy_probs(probs: &Tensor, y_onehot: &Tensor) -> Result<LossValue> {
    check_shapes(y_onehot, probs, "categorical_crossentropy")?;
    check_one_hot(y_onehot)?;
    let k = probs.last_dim();
    let rows = (probs.len() / k) as f64;
    let value = -probs
        .data()
        .iter()
        .zip(y_onehot.data())
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| t * p.clamp(EPSILON, 1.0).ln())
        .sum::<f64>()
        / rows;
    let grad = probs.zip_map(y_onehot, |p, t| (p - t) / rows)?;
    Ok(LossValue { value, grad })
}

/// Binary cross-entropy of sigmoid outputs `p` against targets in `[0, 1]`,
/// averaged over all elements. Gradient is w.r.t. the pre-sigmoid logits.
pub fn binary_crossentropy(p: &Tensor, y: &Tensor) -> Result<LossValue> {
    check_shapes(y, p, "binary_crossentropy")?;
    let n = p.len() as f64;
    let value = -p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pi, &yi)| {
            let c = pi.clamp(EPSILON, 1.0 - EPSILON);
            yi * c.ln() + (1.0 - yi) * (1.0 - c).ln()
        })
        .sum::<f64>()
        / n;
    let grad = p.zip_map(y, |pi, yi| (pi - yi) / n)?;
    Ok(LossValue { value, grad })
}

/// [`binary_crossentropy`] starting from logits.
pub fn sigmoid_binary_crossentropy(logits: &Tensor, y: &Tensor) -> Result<LossValue> {
    binary_crossentropy(&sigmoid(logits), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use std::f64::consts::LN_2;

    /// Central-difference gradient of a scalar function of a tensor.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-6;
        let mut g = Tensor::zeros(x.shape());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Tensor, b: &Tensor, rel: f64) {
        for (x, y) in a.data().iter().zip(b.data()) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
            assert!(err <= rel || (x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn mse_values_and_gradient() {
        let y = Tensor::from_vec(vec![1.0, 2.0]);
        assert_eq!(mse(&y, &y).unwrap().value, 0.0);
        assert_eq!(mse(&y, &Tensor::zeros(&[2])).unwrap().value, 2.5);

        let mut rng = Rng::new(1);
        let y = Tensor::rand_normal(&mut rng, &[3, 4], 0.0, 1.0);
        let p = Tensor::rand_normal(&mut rng, &[3, 4], 0.0, 1.0);
        let g = mse(&y, &p).unwrap().grad;
        let fd = numeric_grad(&p, |q| mse(&y, q).unwrap().value);
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
        assert_eq!(mse(&y, &p).unwrap().value, mse(&p, &y).unwrap().value);
        assert!(mse(&y, &Tensor::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn mae_values_and_gradient() {
        let y = Tensor::from_vec(vec![1.0, 2.0]);
        assert_eq!(mae(&y, &y).unwrap().value, 0.0);
        assert_eq!(mae(&y, &Tensor::zeros(&[2])).unwrap().value, 1.5);
        assert!(mae(&y, &y).unwrap().grad.data().iter().all(|&g| g == 0.0));

        let mut rng = Rng::new(2);
        let y = Tensor::rand_normal(&mut rng, &[12], 0.0, 1.0);
        let mut p = Tensor::rand_normal(&mut rng, &[12], 0.0, 1.0);
        for i in 0..12 {
            if (p.data()[i] - y.data()[i]).abs() < 1e-3 {
                p.data_mut()[i] += 0.1;
            }
        }
        let g = mae(&y, &p).unwrap().grad;
        let fd = numeric_grad(&p, |q| mae(&y, q).unwrap().value);
        assert_close(&g, &fd, 1e-6);
    }

    #[test]
    fn softmax_ce_values() {
        let logits = Tensor::zeros(&[1, 2]);
        let y = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let v = softmax_crossentropy(&logits, &y).unwrap().value;
        assert!((v - LN_2).abs() < 1e-12);

        // near-perfect prediction
        let sharp = Tensor::new([1, 2], vec![40.0, 0.0]).unwrap();
        assert!(softmax_crossentropy(&sharp, &y).unwrap().value < 1e-12);

        let bad = Tensor::new([1, 2], vec![1.0, 1.0]).unwrap();
        assert!(softmax_crossentropy(&logits, &bad).is_err());
    }

    #[test]
    fn softmax_ce_gradient_matches_fd() {
        let mut rng = Rng::new(3);
        let logits = Tensor::rand_normal(&mut rng, &[4, 5], 0.0, 1.0);
        let mut y = Tensor::zeros(&[4, 5]);
        for r in 0..4 {
            y.row_mut(r)[rng.below(5)] = 1.0;
        }
        let g = softmax_crossentropy(&logits, &y).unwrap().grad;
        let fd = numeric_grad(&logits, |z| softmax_crossentropy(z, &y).unwrap().value);
        assert_close(&g, &fd, 1e-6);

        let p = softmax(&logits);
        let via_probs = categorical_crossentropy_probs(&p, &y).unwrap();
        let direct = softmax_crossentropy(&logits, &y).unwrap();
        assert!((via_probs.value - direct.value).abs() < 1e-12);
    }

    #[test]
    fn ce_is_not_symmetric() {
        let a = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new([1, 2], vec![0.8, 0.2]).unwrap();
        let ab = categorical_crossentropy_probs(&b, &a).unwrap().value;
        // swapping roles: target b is not one-hot, so compare the raw sums
        let ba: f64 = -b
            .data()
            .iter()
            .zip(a.data())
            .map(|(t, p)| t * p.clamp(EPSILON, 1.0).ln())
            .sum::<f64>();
        assert!((ab - ba).abs() > 1.0);
    }

    #[test]
    fn bce_values() {
        let one = Tensor::from_vec(vec![1.0]);
        let v = binary_crossentropy(&Tensor::from_vec(vec![1.0 - EPSILON]), &one).unwrap();
        assert!(v.value < 1e-6);
        let v = binary_crossentropy(&Tensor::from_vec(vec![0.5]), &one).unwrap();
        assert!((v.value - LN_2).abs() < 1e-12);
        let v = binary_crossentropy(
            &Tensor::from_vec(vec![0.9, 0.1]),
            &Tensor::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let want = -0.5 * (0.9f64.ln() + 0.9f64.ln());
        assert!((v.value - want).abs() < 1e-12);
        assert!((v.value - 0.1054).abs() < 1e-4);
        // saturated predictions stay finite
        let v = binary_crossentropy(&Tensor::from_vec(vec![0.0]), &one).unwrap();
        assert!(v.value.is_finite());
    }

    #[test]
    fn bce_logit_gradient_matches_fd() {
        let mut rng = Rng::new(8);
        let z = Tensor::rand_normal(&mut rng, &[3, 2], 0.0, 1.0);
        let y = Tensor::rand_uniform(&mut rng, &[3, 2], 0.0, 1.0);
        let g = sigmoid_binary_crossentropy(&z, &y).unwrap().grad;
        let fd = numeric_grad(&z, |q| sigmoid_binary_crossentropy(q, &y).unwrap().value);
        assert_close(&g, &fd, 1e-6);
    }
}
