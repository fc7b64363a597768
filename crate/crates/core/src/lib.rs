//! A small deep-learning framework with hand-written backpropagation.
//!
//! Tensors are dense row-major `f64` arrays. Models are stacks of layers
//! ([`model::SequentialModel`]) trained with minibatch optimizers; every
//! gradient is derived by hand and checked against finite differences.

pub mod activations;
pub mod conv;
pub mod data;
pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod perceptron;
pub mod recurrent;
pub mod tensor;

pub use activations::Activation;
pub use error::{Error, Result};
pub use layers::{Layer, LayerSpec, Mode, Param};
pub use losses::Loss;
pub use metrics::Metric;
pub use model::{FitConfig, History, SequentialModel, Validation};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Rng, Tensor};
