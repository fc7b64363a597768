//! Weight initializers.
//!
//! Fans follow the usual convention: for a kernel of shape
//! `[k1, .., kr, fan_in_units, fan_out_units]` the receptive field
//! `k1 * .. * kr` multiplies both fans. Dense `[in, out]` gives
//! `(in, out)`; a conv kernel `[kh, kw, cin, cout]` gives
//! `(kh*kw*cin, kh*kw*cout)`.

use serde::{Deserialize, Serialize};

use crate::tensor::{Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanMode {
    FanIn,
    FanOut,
    FanAvg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    #[default]
    Glorot,
    VarianceScaling {
        mode: FanMode,
    },
    Normal {
        std: f64,
    },
    Orthogonal,
    Zeros,
}

impl Init {
    pub fn sample(&self, rng: &mut Rng, shape: &[usize]) -> Tensor {
        match *self {
            Init::Glorot => init_glorot(rng, shape),
            Init::VarianceScaling { mode } => init_variance_scaling(rng, shape, mode),
            Init::Normal { std } => init_normal(rng, shape, std),
            Init::Orthogonal => init_orthogonal(rng, shape),
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], shape[0]),
        r => {
            let receptive: usize = shape[..r - 2].iter().product();
            (receptive * shape[r - 2], receptive * shape[r - 1])
        }
    }
}

/// `N(0, 1) / sqrt(fan)`.
pub fn init_variance_scaling(rng: &mut Rng, shape: &[usize], mode: FanMode) -> Tensor {
    let (fan_in, fan_out) = fans(shape);
    let fan = match mode {
        FanMode::FanIn => fan_in as f64,
        FanMode::FanOut => fan_out as f64,
        FanMode::FanAvg => (fan_in + fan_out) as f64 / 2.0,
    };
    Tensor::rand_normal(rng, shape, 0.0, 1.0 / fan.max(1.0).sqrt())
}

/// `sqrt(2 / (fan_in + fan_out)) * N(0, 1)`.
pub fn init_glorot(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = fans(shape);
    let std = (2.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::rand_normal(rng, shape, 0.0, std)
}

pub fn init_normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    Tensor::rand_normal(rng, shape, 0.0, std)
}

/// Matrix with orthonormal rows or columns (whichever is shorter), built by
/// modified Gram–Schmidt on a Gaussian matrix. Used for recurrent kernels.
pub fn init_orthogonal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let (rows, cols) = match shape.len() {
        0 => return Tensor::scalar(1.0),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    };
    // Orthonormalize the `k` longer vectors of length `n`.
    let (k, n) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.normal()).collect())
        .collect();
    for i in 0..k {
        for j in 0..i {
            let (head, tail) = vecs.split_at_mut(i);
            let dot: f64 = head[j].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
            tail[0]
                .iter_mut()
                .zip(&head[j])
                .for_each(|(v, u)| *v -= dot * u);
        }
        let norm = vecs[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}
