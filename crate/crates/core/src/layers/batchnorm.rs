use super::{rows_and_width, Layer, LayerSpec, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

const GAMMA: usize = 0;
const BETA: usize = 1;
const RUNNING_MEAN: usize = 2;
const RUNNING_VAR: usize = 3;

/// Batch normalization over the last axis.
///
/// Training uses the (biased) batch statistics and folds them into the
/// running averages as `r <- momentum * r + (1 - momentum) * batch_stat`.
/// Inference normalizes with the running averages.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    momentum: f64,
    eps: f64,
    params: Vec<Param>,
    cache: Option<Cache>,
}

#[derive(Clone, Debug)]
struct Cache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(momentum: f64, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) || eps <= 0.0 {
            return Err(Error::invalid(format!(
                "batch norm momentum {momentum} / eps {eps} out of range"
            )));
        }
        Ok(Self {
            momentum,
            eps,
            params: Vec::new(),
            cache: None,
        })
    }

    pub fn running_mean(&self) -> &Tensor {
        &self.params[RUNNING_MEAN].value
    }

    pub fn running_var(&self) -> &Tensor {
        &self.params[RUNNING_VAR].value
    }

    pub fn set_affine(&mut self, gamma: Tensor, beta: Tensor) -> Result<()> {
        self.params[GAMMA].value.expect_same_shape(&gamma, "batch norm gamma")?;
        self.params[BETA].value.expect_same_shape(&beta, "batch norm beta")?;
        self.params[GAMMA].value = gamma;
        self.params[BETA].value = beta;
        Ok(())
    }

    fn features(&self) -> usize {
        self.params[GAMMA].value.len()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize)> {
        let (rows, f) = rows_and_width(x);
        if self.params.is_empty() || f != self.features() {
            return Err(Error::ShapeMismatch {
                op: "batch norm",
                left: x.shape().to_vec(),
                right: vec![self.params.first().map_or(0, |p| p.value.len())],
            });
        }
        Ok((rows, f))
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let f = mean.len();
        let gamma = self.params[GAMMA].value.data();
        let beta = self.params[BETA].value.data();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for (i, (h, o)) in x_hat.data_mut().iter_mut().zip(y.data_mut()).enumerate() {
            let j = i % f;
            *h = (*h - mean[j]) * inv_std[j];
            *o = gamma[j] * *h + beta[j];
        }
        (x_hat, y)
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batch_norm"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::BatchNorm {
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    fn build(&mut self, input_shape: &[usize], _rng: &mut Rng) -> Result<Vec<usize>> {
        let f = *input_shape
            .last()
            .ok_or_else(|| Error::invalid("batch norm needs at least one feature axis"))?;
        self.params = vec![
            Param::new("gamma", Tensor::ones(&[f])),
            Param::new("beta", Tensor::zeros(&[f])),
            Param::frozen("moving_mean", Tensor::zeros(&[f])),
            Param::frozen("moving_variance", Tensor::ones(&[f])),
        ];
        self.cache = None;
        Ok(input_shape.to_vec())
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (rows, f) = self.check(x)?;
        if rows < 2 {
            return Err(Error::invalid(
                "batch norm in training mode needs at least 2 rows",
            ));
        }
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for row in x.data().chunks(f) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in x.data().chunks(f) {
            for j in 0..f {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (x_hat, y) = self.normalize(x, &mean, &inv_std);

        if mode == Mode::Train {
            let m = self.momentum;
            let rm = self.params[RUNNING_MEAN].value.data_mut();
            rm.iter_mut()
                .zip(&mean)
                .for_each(|(r, &b)| *r = m * *r + (1.0 - m) * b);
            let rv = self.params[RUNNING_VAR].value.data_mut();
            rv.iter_mut()
                .zip(&var)
                .for_each(|(r, &b)| *r = m * *r + (1.0 - m) * b);
        }
        self.cache = Some(Cache { x_hat, inv_std });
        Ok(y)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mean = self.params[RUNNING_MEAN].value.data();
        let inv_std: Vec<f64> = self.params[RUNNING_VAR]
            .value
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        Ok(self.normalize(x, mean, &inv_std).1)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("batch_norm"))?;
        upstream.expect_same_shape(&cache.x_hat, "batch norm backward")?;
        let f = self.features();
        let n = (upstream.len() / f) as f64;
        let gamma = self.params[GAMMA].value.data();

        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        for (dy, xh) in upstream.data().chunks(f).zip(cache.x_hat.data().chunks(f)) {
            for j in 0..f {
                dgamma[j] += dy[j] * xh[j];
                dbeta[j] += dy[j];
            }
        }
        // dx = gamma * inv_std / n * (n * dy - sum(dy) - x_hat * sum(dy * x_hat))
        let mut dx = upstream.clone();
        for (i, d) in dx.data_mut().iter_mut().enumerate() {
            let j = i % f;
            let xh = cache.x_hat.data()[i];
            *d = gamma[j] * cache.inv_std[j] / n * (n * *d - dbeta[j] - xh * dgamma[j]);
        }
        self.params[GAMMA].grad = Tensor::from_vec(dgamma);
        self.params[BETA].grad = Tensor::from_vec(dbeta);
        Ok(dx)
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}
