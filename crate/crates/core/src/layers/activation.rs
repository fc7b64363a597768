use super::{Layer, LayerSpec, Mode};
use crate::activations::{activation_backward, Activation};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// A standalone activation (e.g. `LeakyReLU(0.2)` after a linear dense, or
/// the softmax head of a recurrent language model).
#[derive(Clone, Debug)]
pub struct ActivationLayer {
    activation: Activation,
    input: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            input: None,
        }
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> &'static str {
        "activation"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Activation {
            activation: self.activation,
        }
    }

    fn build(&mut self, input_shape: &[usize], _rng: &mut Rng) -> Result<Vec<usize>> {
        Ok(input_shape.to_vec())
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.input = Some(x.clone());
        Ok(self.activation.apply(x))
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activation.apply(x))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("activation"))?;
        activation_backward(self.activation, x, upstream)
    }

    fn backward_from_logits(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward("activation"))?;
        dlogits.expect_same_shape(x, "activation backward")?;
        Ok(dlogits.clone())
    }

    fn output_activation(&self) -> Option<Activation> {
        Some(self.activation)
    }
}
