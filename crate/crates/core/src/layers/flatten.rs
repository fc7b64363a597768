use super::{Layer, LayerSpec, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// `[b, d1, .., dk] -> [b, d1 * .. * dk]`, row-major per sample.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    fn flatten(x: &Tensor) -> Result<Tensor> {
        if x.rank() == 0 {
            return Err(Error::invalid("flatten needs a batch axis"));
        }
        x.reshape(&[x.rows(), x.row_len()])
    }
}

impl Layer for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Flatten
    }

    fn build(&mut self, input_shape: &[usize], _rng: &mut Rng) -> Result<Vec<usize>> {
        if input_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "cannot flatten variable-length shape {input_shape:?}"
            )));
        }
        Ok(vec![input_shape.iter().product()])
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.input_shape = Some(x.shape().to_vec());
        Self::flatten(x)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Self::flatten(x)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("flatten"))?;
        upstream.reshape(shape)
    }
}
