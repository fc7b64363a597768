//! Single-layer perceptron trained with the classic mistake-driven rule.
//!
//! The bias lives in the last weight: inputs are augmented with a constant
//! 1 column before every dot product.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Unit step with a strict threshold: `step(0) == 0`.
pub fn step_fn(x: f64) -> u8 {
    u8::from(x > 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perceptron {
    /// `N` feature weights followed by the bias.
    pub w: Vec<f64>,
    pub alpha: f64,
}

impl Perceptron {
    /// Weights drawn from `N(0, 1) / sqrt(N)`.
    pub fn new(n_features: usize, alpha: f64, rng: &mut Rng) -> Self {
        let scale = (n_features.max(1) as f64).sqrt();
        let w = (0..=n_features).map(|_| rng.normal() / scale).collect();
        Self { w, alpha }
    }

    pub fn zeros(n_features: usize, alpha: f64) -> Self {
        Self {
            w: vec![0.0; n_features + 1],
            alpha,
        }
    }

    pub fn n_features(&self) -> usize {
        self.w.len() - 1
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.last_dim() != self.n_features() {
            return Err(Error::ShapeMismatch {
                op: "perceptron",
                left: x.shape().to_vec(),
                right: vec![self.n_features()],
            });
        }
        Ok(())
    }

    fn activation(&self, x: &[f64]) -> f64 {
        let n = self.n_features();
        x.iter().zip(&self.w[..n]).map(|(a, b)| a * b).sum::<f64>() + self.w[n]
    }

    pub fn predict_one(&self, x: &[f64]) -> u8 {
        step_fn(self.activation(x))
    }

    /// Presents every sample once per epoch, in order, updating only on
    /// mistakes: `w -= alpha * (pred - target) * [x, 1]`.
    pub fn fit(&mut self, x: &Tensor, y: &[u8], epochs: usize) -> Result<()> {
        self.check(x)?;
        if y.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "perceptron fit",
                left: x.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        if let Some(bad) = y.iter().find(|&&t| t > 1) {
            return Err(Error::invalid(format!("perceptron target {bad} is not 0 or 1")));
        }
        let n = self.n_features();
        for _ in 0..epochs {
            for (i, &target) in y.iter().enumerate() {
                let row = x.row(i);
                let p = self.predict_one(row);
                if p != target {
                    let error = f64::from(p) - f64::from(target);
                    for (w, xi) in self.w[..n].iter_mut().zip(row) {
                        *w += -self.alpha * error * xi;
                    }
                    self.w[n] += -self.alpha * error;
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        self.check(x)?;
        Ok((0..x.rows()).map(|i| self.predict_one(x.row(i))).collect())
    }

    /// Fraction of rows predicted correctly.
    pub fn accuracy(&self, x: &Tensor, y: &[u8]) -> Result<f64> {
        let p = self.predict(x)?;
        let hits = p.iter().zip(y).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / y.len().max(1) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Or,
    And,
    Xor,
}

impl Gate {
    /// The four binary input pairs and the gate's truth table.
    pub fn dataset(self) -> (Tensor, Vec<u8>) {
        let x = Tensor::new([4, 2], vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        let y = match self {
            Gate::Or => vec![0, 1, 1, 1],
            Gate::And => vec![0, 0, 0, 1],
            Gate::Xor => vec![0, 1, 1, 0],
        };
        (x, y)
    }
}
