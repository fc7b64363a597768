use super::{Layer, LayerSpec, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// Inverted dropout. `rate` is the probability of dropping an element;
/// survivors are scaled by `1 / (1 - rate)` so inference is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    rate: f64,
    rng: Rng,
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0,1)")));
        }
        Ok(Self {
            rate,
            rng: Rng::new(0),
            mask: None,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = Rng::new(seed);
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Dropout { rate: self.rate }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        self.rng = rng.split();
        self.mask = None;
        Ok(input_shape.to_vec())
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        if self.rate == 0.0 {
            self.mask = Some(Tensor::ones(x.shape()));
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mut mask = Tensor::zeros(x.shape());
        for m in mask.data_mut() {
            if self.rng.uniform() < keep {
                *m = scale;
            }
        }
        let out = x.mul(&mask)?;
        self.mask = Some(mask);
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let mask = self.mask.as_ref().ok_or(Error::BackwardBeforeForward("dropout"))?;
        upstream.mul(mask)
    }
}
