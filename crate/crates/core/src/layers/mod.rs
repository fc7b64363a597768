//! The [`Layer`] contract and the layers that do not need their own module.
//!
//! Shapes passed to [`Layer::build`] exclude the batch axis. An extent of `0`
//! marks a variable-length axis (the time axis of recurrent inputs).
//!
//! A layer caches exactly what its backward pass needs during
//! [`Layer::forward`]; the cache is replaced on the next forward call.
//! [`Layer::infer`] takes `&self` and never touches caches, so a built layer
//! can serve inference from several threads.

mod activation;
mod batchnorm;
mod dense;
mod dropout;
mod flatten;
pub mod init;

use serde::{Deserialize, Serialize};

pub use activation::ActivationLayer;
pub use batchnorm::BatchNorm;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use init::{FanMode, Init};

use crate::activations::Activation;
use crate::conv::{Conv2D, Padding, Pool2D, PoolKind};
use crate::error::{Error, Result};
use crate::recurrent::{Embedding, Lstm, SimpleRnn, TimeDistributed};
use crate::tensor::{Rng, Tensor};

/// A named parameter tensor with its most recent gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Non-trainable parameters (batch-norm running statistics, frozen
    /// embeddings) are saved and counted but never stepped.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: &str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(name: &str, value: Tensor) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }
}

/// Behaviour of a caching forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Training behaviour; stateful layers update their running statistics.
    Train,
    /// Training behaviour (dropout active, batch statistics) with every
    /// parameter, including running statistics, left untouched.
    Frozen,
}

pub trait Layer: Send + Sync {
    /// Layer kind, as printed in summaries.
    fn kind(&self) -> &'static str;

    /// Declarative description sufficient to rebuild the layer.
    fn spec(&self) -> LayerSpec;

    /// Allocates and initializes parameters for a per-sample input shape and
    /// returns the per-sample output shape.
    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>>;

    /// Forward pass that caches what [`Layer::backward`] needs.
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Inference-mode forward pass; no caching, no state updates.
    fn infer(&self, x: &Tensor) -> Result<Tensor>;

    /// Given dL/d(output), stores parameter gradients and returns dL/d(input).
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    /// Like [`Layer::backward`] but `dlogits` is the gradient w.r.t. the
    /// pre-activation of the layer's output activation. Used by the fused
    /// softmax/sigmoid cross-entropy losses.
    fn backward_from_logits(&mut self, _dlogits: &Tensor) -> Result<Tensor> {
        Err(Error::Unsupported(format!(
            "{} cannot take a fused loss gradient",
            self.kind()
        )))
    }

    /// The activation applied last by this layer, if any.
    fn output_activation(&self) -> Option<Activation> {
        None
    }

    fn params(&self) -> &[Param] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut []
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Serializable layer description. Building a spec yields a fresh, unbuilt
/// layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default)]
        init: Init,
    },
    Activation {
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    Flatten,
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        dilation: usize,
        #[serde(default)]
        activation: Activation,
    },
    Pool2d {
        kind: PoolKind,
        pool: usize,
        stride: usize,
    },
    SimpleRnn {
        units: usize,
        activation: Activation,
        return_sequences: bool,
    },
    Lstm {
        units: usize,
        return_sequences: bool,
    },
    Embedding {
        vocab: usize,
        dim: usize,
        trainable: bool,
    },
    TimeDistributed {
        units: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            units,
            activation,
            init: Init::default(),
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }

    /// Batch normalization with momentum 0.99 and eps 1e-3.
    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: 0.99,
            eps: 1e-3,
        }
    }

    /// Stride-1, undilated square convolution.
    pub fn conv2d(filters: usize, kernel: usize, padding: Padding, activation: Activation) -> Self {
        LayerSpec::Conv2d {
            filters,
            kernel,
            stride: 1,
            padding,
            dilation: 1,
            activation,
        }
    }

    /// Pooling whose stride equals the window.
    pub fn pool2d(kind: PoolKind, pool: usize) -> Self {
        LayerSpec::Pool2d {
            kind,
            pool,
            stride: pool,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Pool2d { .. } => "pool2d",
            LayerSpec::SimpleRnn { .. } => "simple_rnn",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::TimeDistributed { .. } => "time_distributed",
        }
    }

    pub fn instantiate(&self) -> Result<Box<dyn Layer>> {
        Ok(match *self {
            LayerSpec::Dense {
                units,
                activation,
                init,
            } => Box::new(Dense::new(units, activation).with_init(init)),
            LayerSpec::Activation { activation } => Box::new(ActivationLayer::new(activation)),
            LayerSpec::Dropout { rate } => Box::new(Dropout::new(rate)?),
            LayerSpec::BatchNorm { momentum, eps } => Box::new(BatchNorm::new(momentum, eps)?),
            LayerSpec::Flatten => Box::new(Flatten::new()),
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
                dilation,
                activation,
            } => Box::new(Conv2D::new(
                filters, kernel, stride, padding, dilation, activation,
            )?),
            LayerSpec::Pool2d { kind, pool, stride } => Box::new(Pool2D::new(kind, pool, stride)?),
            LayerSpec::SimpleRnn {
                units,
                activation,
                return_sequences,
            } => Box::new(SimpleRnn::new(units, activation, return_sequences)),
            LayerSpec::Lstm {
                units,
                return_sequences,
            } => Box::new(Lstm::new(units, return_sequences)),
            LayerSpec::Embedding {
                vocab,
                dim,
                trainable,
            } => Box::new(Embedding::new(vocab, dim, trainable)),
            LayerSpec::TimeDistributed { units, activation } => {
                Box::new(TimeDistributed::new(Dense::new(units, activation)))
            }
        })
    }
}

/// Splits a tensor of shape `[.., n]` into `(rows, n)`.
pub(crate) fn rows_and_width(x: &Tensor) -> (usize, usize) {
    let w = x.last_dim();
    (x.len().checked_div(w).unwrap_or(0), w)
}

pub(crate) fn expect_rank(x: &Tensor, rank: usize, layer: &'static str) -> Result<()> {
    if x.rank() != rank {
        return Err(Error::invalid(format!(
            "{layer} expects a rank-{rank} input, got shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}
