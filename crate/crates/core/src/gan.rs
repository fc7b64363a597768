//! Adversarial training of a generator/discriminator pair of dense models.
//!
//! Each step trains the discriminator on real rows (target `smoothing`) and
//! generated rows (target 0), then trains the generator through the
//! discriminator against all-ones targets. The discriminator is run in
//! [`Mode::Frozen`] during the generator step and its gradients are never
//! applied, so only one network moves per half-step.

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::layers::{Init, LayerSpec, Mode};
use crate::losses::{binary_crossentropy, EPSILON};
use crate::model::SequentialModel;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Rng, Tensor};

/// Per-step loss traces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanHistory {
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
}

impl GanHistory {
    pub fn len(&self) -> usize {
        self.d_losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_losses.is_empty()
    }

    /// `step,d_loss,g_loss` rows, steps counted from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,d_loss,g_loss\n");
        for (i, (d, g)) in self.d_losses.iter().zip(&self.g_losses).enumerate() {
            out.push_str(&format!("{},{d},{g}\n", i + 1));
        }
        out
    }
}

pub struct GanTrainer {
    pub generator: SequentialModel,
    pub discriminator: SequentialModel,
    pub latent_dim: usize,
    pub batch_size: usize,
    /// Target assigned to real rows in the discriminator step.
    pub smoothing: f64,
    d_optimizer: Optimizer,
    g_optimizer: Optimizer,
    steps: usize,
}

impl GanTrainer {
    /// Both models must already be built. The generator maps
    /// `[latent_dim]` to the discriminator's input shape, and the
    /// discriminator ends in a single sigmoid unit.
    pub fn new(
        generator: SequentialModel,
        discriminator: SequentialModel,
        d_optimizer: OptimizerKind,
        g_optimizer: OptimizerKind,
        batch_size: usize,
    ) -> Result<Self> {
        if !generator.is_built() || !discriminator.is_built() {
            return Err(Error::invalid("generator and discriminator must be built"));
        }
        let latent = generator.input_shape();
        if latent.len() != 1 {
            return Err(Error::invalid(format!("latent input must be a vector, got {latent:?}")));
        }
        if generator.output_shape() != discriminator.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "gan generator output vs discriminator input",
                left: generator.output_shape().to_vec(),
                right: discriminator.input_shape().to_vec(),
            });
        }
        let head = discriminator.layers().last().and_then(|l| l.output_activation());
        if discriminator.output_shape() != [1] || head != Some(Activation::Sigmoid) {
            return Err(Error::invalid("discriminator must end in one sigmoid unit"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(Self {
            latent_dim: latent[0],
            generator,
            discriminator,
            batch_size,
            smoothing: 0.9,
            d_optimizer: Optimizer::new(d_optimizer),
            g_optimizer: Optimizer::new(g_optimizer),
            steps: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn noise(&self, rng: &mut Rng, n: usize) -> Tensor {
        Tensor::rand_normal(rng, &[n, self.latent_dim], 0.0, 1.0)
    }

    /// Generator outputs for the given latent rows, in inference mode.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        self.generator.predict(z)
    }

    fn finite(&self, value: f64) -> Result<f64> {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFiniteLoss {
                batch: self.steps,
                value,
            })
        }
    }

    /// One update of the discriminator on `real` plus as many generated
    /// rows. Returns the binary cross-entropy over all `2b` rows.
    pub fn discriminator_step(&mut self, real: &Tensor, rng: &mut Rng) -> Result<f64> {
        let b = real.rows();
        let z = self.noise(rng, b);
        let fake = self.generator.predict(&z)?;
        let x = Tensor::concat_rows(&[real, &fake])?;
        let mut y = Tensor::zeros(&[2 * b, 1]);
        y.data_mut()[..b].fill(self.smoothing);
        let out = self.discriminator.forward(&x, Mode::Train)?;
        let lv = binary_crossentropy(&out, &y)?;
        let loss = self.finite(lv.value)?;
        self.discriminator.backward(&lv.grad, true)?;
        self.discriminator.apply_gradients(&mut self.d_optimizer)?;
        Ok(loss)
    }

    /// One update of the generator on `-mean(ln D(G(z)))` with `b` latent
    /// rows.
    pub fn generator_step(&mut self, b: usize, rng: &mut Rng) -> Result<f64> {
        let z = self.noise(rng, b);
        let loss = self.generator_backward(&z)?;
        self.generator.apply_gradients(&mut self.g_optimizer)?;
        Ok(loss)
    }

    /// Generator loss for the latent rows `z`, leaving its gradient in the
    /// generator's parameters without applying it.
    pub fn generator_backward(&mut self, z: &Tensor) -> Result<f64> {
        let fake = self.generator.forward(z, Mode::Train)?;
        let out = self.discriminator.forward(&fake, Mode::Frozen)?;
        let lv = binary_crossentropy(&out, &Tensor::ones(&[z.rows(), 1]))?;
        let loss = self.finite(lv.value)?;
        let dx = self.discriminator.backward(&lv.grad, true)?;
        self.generator.backward(&dx, false)?;
        Ok(loss)
    }

    /// `epochs * floor(n / batch_size)` alternating steps. Real batches are
    /// drawn with replacement. `hook(epoch, samples)` receives generator
    /// outputs for a fixed set of `n_samples` latent rows on epoch 1 and
    /// every `hook_every`-th epoch.
    pub fn train(
        &mut self,
        real: &Tensor,
        epochs: usize,
        rng: &mut Rng,
        hook_every: usize,
        n_samples: usize,
        mut hook: impl FnMut(usize, &Tensor) -> Result<()>,
    ) -> Result<GanHistory> {
        let n = real.rows();
        if n < self.batch_size {
            return Err(Error::invalid(format!(
                "{n} real rows is fewer than batch size {}",
                self.batch_size
            )));
        }
        let fixed = self.noise(rng, n_samples);
        let batch_count = n / self.batch_size;
        let mut history = GanHistory::default();
        for epoch in 1..=epochs {
            for _ in 0..batch_count {
                let idx: Vec<usize> = (0..self.batch_size).map(|_| rng.below(n)).collect();
                let batch = real.select_rows(&idx)?;
                self.steps += 1;
                history.d_losses.push(self.discriminator_step(&batch, rng)?);
                history.g_losses.push(self.generator_step(self.batch_size, rng)?);
            }
            if n_samples > 0 && hook_every > 0 && (epoch == 1 || epoch % hook_every == 0) {
                hook(epoch, &self.generate(&fixed)?)?;
            }
        }
        Ok(history)
    }
}

/// Dense generator `latent → 256 → 512 → 1024 → data_dim`, leaky ReLU
/// (slope 0.2) hidden units and a tanh output.
pub fn reference_generator(data_dim: usize) -> Vec<LayerSpec> {
    let leaky = Activation::LeakyRelu { slope: 0.2 };
    vec![
        LayerSpec::dense(256, leaky),
        LayerSpec::dense(512, leaky),
        LayerSpec::dense(1024, leaky),
        LayerSpec::dense(data_dim, Activation::Tanh),
    ]
}

/// Dense discriminator `1024 → 512 → 256 → 1`, leaky ReLU with dropout 0.3
/// after each hidden layer, the first kernel drawn from `N(0, 0.02²)`.
pub fn reference_discriminator() -> Vec<LayerSpec> {
    let leaky = Activation::LeakyRelu { slope: 0.2 };
    vec![
        LayerSpec::Dense {
            units: 1024,
            activation: leaky,
            init: Init::Normal { std: 0.02 },
        },
        LayerSpec::dropout(0.3),
        LayerSpec::dense(512, leaky),
        LayerSpec::dropout(0.3),
        LayerSpec::dense(256, leaky),
        LayerSpec::dropout(0.3),
        LayerSpec::dense(1, Activation::Sigmoid),
    ]
}

pub const REFERENCE_LATENT_DIM: usize = 10;

/// Adam with learning rate `2e-4` and `beta1 = 0.5`.
pub fn reference_optimizer() -> OptimizerKind {
    OptimizerKind::Adam {
        lr: 2e-4,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    }
}

/// Builds the reference pair and wraps it in a trainer.
pub fn reference_trainer(data_dim: usize, batch_size: usize, rng: &mut Rng) -> Result<GanTrainer> {
    let mut g = SequentialModel::new(&reference_generator(data_dim))?;
    g.build(&[REFERENCE_LATENT_DIM], rng)?;
    let mut d = SequentialModel::new(&reference_discriminator())?;
    d.build(&[data_dim], rng)?;
    GanTrainer::new(g, d, reference_optimizer(), reference_optimizer(), batch_size)
}

fn mean_ln(p: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    p.iter()
        .map(|&v| f(v.clamp(EPSILON, 1.0 - EPSILON)).ln())
        .sum::<f64>()
        / p.len().max(1) as f64
}

/// Terms of the discriminator objective for fixed outputs:
/// `(-mean ln D(x), -mean ln(1 - D(G(z))))`. The objective is half their
/// sum.
pub fn discriminator_terms(d_real: &[f64], d_fake: &[f64]) -> (f64, f64) {
    (-mean_ln(d_real, |p| p), -mean_ln(d_fake, |p| 1.0 - p))
}

/// `mean ln(1 - D(G(z)))`, the generator value of the minimax game.
pub fn saturating_generator_value(d_fake: &[f64]) -> f64 {
    mean_ln(d_fake, |p| 1.0 - p)
}

/// `-mean ln D(G(z))`, the objective the generator step minimizes.
pub fn non_saturating_generator_loss(d_fake: &[f64]) -> f64 {
    -mean_ln(d_fake, |p| p)
}
