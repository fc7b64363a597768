//! Sequential layer stacks: compile, fit, evaluate, predict and persistence.

mod callbacks;
mod history;
mod io;
mod split;

use std::fmt::Write as _;

pub use callbacks::{
    Callback, Control, EarlyStopping, LrStepDecay, ModelCheckpoint, Monitor, Periodic,
};
pub use history::{EpochLog, History};
pub use split::{kfold_indices, train_test_split, train_val_test_split, Partition, SplitDataset};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerSpec, Mode, Param};
use crate::losses::Loss;
use crate::metrics::{binarize, Metric};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{argmax, Rng, Tensor};

/// Rows per forward pass in [`SequentialModel::predict`]; bounds the memory
/// taken by convolution patch matrices.
pub const PREDICT_BATCH: usize = 64;

#[derive(Clone, Debug)]
struct Training {
    loss: Loss,
    optimizer: Optimizer,
    metrics: Vec<Metric>,
}

/// Loss and metric values of one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// In the order the metrics were compiled.
    pub metrics: Vec<(Metric, f64)>,
}

impl Evaluation {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }
}

/// Where validation data comes from during [`SequentialModel::fit`].
#[derive(Clone, Debug, Default)]
pub enum Validation {
    #[default]
    None,
    /// The last `fraction` of the rows, taken before any shuffling and held
    /// fixed for every epoch.
    Split(f64),
    Data(Tensor, Tensor),
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub validation: Validation,
    pub shuffle: bool,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 1,
            validation: Validation::None,
            shuffle: true,
            seed: 0,
        }
    }
}

/// An ordered stack of layers. `build` fixes shapes and initializes
/// parameters; `compile` additionally attaches a loss, optimizer and
/// metrics for [`SequentialModel::fit`].
pub struct SequentialModel {
    layers: Vec<Box<dyn Layer>>,
    input_shape: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    training: Option<Training>,
}

impl std::fmt::Debug for SequentialModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SequentialModel")
            .field("layers", &self.specs())
            .field("input_shape", &self.input_shape)
            .finish()
    }
}

impl SequentialModel {
    pub fn new(specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs.iter().map(LayerSpec::instantiate).collect::<Result<_>>()?;
        Ok(Self::from_layers(layers))
    }

    /// Wraps already-constructed layers. Layers that arrive with parameters
    /// (e.g. a pretrained embedding table) keep them only if their `build`
    /// preserves them.
    pub fn from_layers(layers: Vec<Box<dyn Layer>>) -> Self {
        Self {
            layers,
            input_shape: Vec::new(),
            shapes: Vec::new(),
            training: None,
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut (dyn Layer + 'static)> {
        self.layers.get_mut(index).map(|l| l.as_mut())
    }

    pub fn is_built(&self) -> bool {
        !self.shapes.is_empty() || (self.layers.is_empty() && !self.input_shape.is_empty())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape; empty before `build`.
    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().map_or(&self.input_shape, |s| s)
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Validates the chain against `input_shape` (batch axis excluded) and
    /// initializes every parameter from `rng`.
    pub fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        let mut shape = input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter_mut().enumerate() {
            shape = layer.build(&shape, rng).map_err(|e| Error::IncompatibleLayers {
                index,
                layer: layer.kind().to_string(),
                detail: format!("input shape {} rejected: {e}", format_shape(&shape)),
            })?;
            shapes.push(shape.clone());
        }
        self.input_shape = input_shape.to_vec();
        self.shapes = shapes;
        Ok(())
    }

    /// [`build`](Self::build) plus the training configuration. A fused
    /// cross-entropy loss requires the matching output activation (softmax
    /// for categorical, sigmoid for binary).
    pub fn compile(
        &mut self,
        input_shape: &[usize],
        loss: Loss,
        optimizer: OptimizerKind,
        metrics: &[Metric],
        rng: &mut Rng,
    ) -> Result<()> {
        self.check_loss(loss)?;
        self.build(input_shape, rng)?;
        self.set_training(loss, optimizer, metrics);
        Ok(())
    }

    fn check_loss(&self, loss: Loss) -> Result<()> {
        let want = match loss {
            Loss::CategoricalCrossentropy => Activation::Softmax,
            Loss::BinaryCrossentropy => Activation::Sigmoid,
            Loss::Mse | Loss::Mae => return Ok(()),
        };
        let last = self.layers.last().ok_or(Error::NotCompiled)?;
        if last.output_activation() != Some(want) {
            return Err(Error::invalid(format!(
                "{} needs a final {} activation, last layer is {} with {}",
                loss.name(),
                want.name(),
                last.kind(),
                last.output_activation().map_or("none", |a| a.name())
            )));
        }
        Ok(())
    }

    fn set_training(&mut self, loss: Loss, optimizer: OptimizerKind, metrics: &[Metric]) {
        self.training = Some(Training {
            loss,
            optimizer: Optimizer::new(optimizer),
            metrics: metrics.to_vec(),
        });
    }

    pub fn is_compiled(&self) -> bool {
        self.training.is_some()
    }

    pub fn loss(&self) -> Option<Loss> {
        self.training.as_ref().map(|t| t.loss)
    }

    pub fn metrics(&self) -> &[Metric] {
        self.training.as_ref().map_or(&[], |t| &t.metrics)
    }

    pub fn optimizer(&self) -> Option<&Optimizer> {
        self.training.as_ref().map(|t| &t.optimizer)
    }

    pub fn optimizer_mut(&mut self) -> Option<&mut Optimizer> {
        self.training.as_mut().map(|t| &mut t.optimizer)
    }

    fn training(&self) -> Result<&Training> {
        self.training.as_ref().ok_or(Error::NotCompiled)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut()).collect()
    }

    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn trainable_params(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Copies of every parameter value, in layer order.
    pub fn weights(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_weights(&mut self, weights: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != weights.len() {
            return Err(Error::invalid(format!(
                "model has {} parameters, got {}",
                params.len(),
                weights.len()
            )));
        }
        for (p, w) in params.iter_mut().zip(weights) {
            p.value.expect_same_shape(w, "set_weights")?;
        }
        for (p, w) in params.iter_mut().zip(weights) {
            p.value = w.clone();
        }
        Ok(())
    }

    /// CRC32 over the bit patterns of every parameter value.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for p in self.params() {
            for v in p.value.data() {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Layer table with output shapes and parameter counts.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let rule = "=".repeat(72);
        writeln!(out, "{:<32}{:<28}{:>12}", "Layer (type)", "Output Shape", "Param #").unwrap();
        writeln!(out, "{rule}").unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = self.shapes.get(i).map_or("?".to_string(), |s| format_shape(s));
            writeln!(
                out,
                "{:<32}{:<28}{:>12}",
                format!("{}_{i} ({})", layer.kind(), layer.kind()),
                shape,
                layer.param_count()
            )
            .unwrap();
        }
        writeln!(out, "{rule}").unwrap();
        let total = self.total_params();
        let trainable = self.trainable_params();
        writeln!(out, "Total params: {}", group_thousands(total)).unwrap();
        writeln!(out, "Trainable params: {}", group_thousands(trainable)).unwrap();
        writeln!(out, "Non-trainable params: {}", group_thousands(total - trainable)).unwrap();
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if !self.is_built() {
            return Err(Error::NotCompiled);
        }
        let s = x.shape();
        let ok = s.len() == self.input_shape.len() + 1
            && s[1..]
                .iter()
                .zip(&self.input_shape)
                .all(|(&got, &want)| want == 0 || got == want);
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: s.to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    /// Caching forward pass through every layer.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Backpropagates `grad` from the output to the input, storing every
    /// parameter gradient. With `from_logits`, `grad` is taken w.r.t. the
    /// last layer's pre-activation (fused cross-entropy).
    pub fn backward(&mut self, grad: &Tensor, from_logits: bool) -> Result<Tensor> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = if from_logits && i + 1 == self.shapes.len() {
                layer.backward_from_logits(&g)?
            } else {
                layer.backward(&g)?
            };
        }
        Ok(g)
    }

    /// Steps every trainable parameter with an external optimizer.
    pub fn apply_gradients(&mut self, optimizer: &mut Optimizer) -> Result<()> {
        optimizer.step(&mut self.params_mut())
    }

    /// One forward/backward/update on a batch; returns the batch loss.
    pub fn train_on_batch(&mut self, x: &Tensor, y: &Tensor) -> Result<f64> {
        let loss = self.training()?.loss;
        let out = self.forward(x, Mode::Train)?;
        let lv = loss.evaluate(y, &out)?;
        if !lv.value.is_finite() {
            return Ok(lv.value);
        }
        self.backward(&lv.grad, loss.is_fused())?;
        let mut training = self.training.take().ok_or(Error::NotCompiled)?;
        let stepped = self.apply_gradients(&mut training.optimizer);
        self.training = Some(training);
        stepped?;
        Ok(lv.value)
    }

    /// Inference-mode forward pass in chunks of [`PREDICT_BATCH`] rows.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let n = x.rows();
        if n <= PREDICT_BATCH {
            return self.infer(x);
        }
        let mut parts = Vec::with_capacity(n.div_ceil(PREDICT_BATCH));
        for start in (0..n).step_by(PREDICT_BATCH) {
            parts.push(self.infer(&x.slice_rows(start, (start + PREDICT_BATCH).min(n))?)?);
        }
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Loss and compiled metrics in inference mode.
    pub fn evaluate(&self, x: &Tensor, y: &Tensor) -> Result<Evaluation> {
        let training = self.training()?;
        if x.rows() != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "evaluate rows",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let out = self.predict(x)?;
        let loss = training.loss.evaluate(y, &out)?.value;
        let metrics = training
            .metrics
            .iter()
            .map(|&m| Ok((m, metric_value(m, y, &out)?)))
            .collect::<Result<_>>()?;
        Ok(Evaluation { loss, metrics })
    }

    /// Minibatch training. Each epoch reshuffles the training rows (seeded
    /// from `config.seed`), then recomputes the training and validation
    /// loss and metrics in inference mode, records them, and runs the
    /// callbacks in order.
    pub fn fit(
        &mut self,
        x: &Tensor,
        y: &Tensor,
        config: &FitConfig,
        callbacks: &mut [&mut dyn Callback],
    ) -> Result<History> {
        let metric_names = self.training()?.metrics.iter().map(|m| m.name().to_string()).collect();
        if x.rows() != y.rows() {
            return Err(Error::ShapeMismatch {
                op: "fit rows",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if config.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let (xt, yt, val) = match &config.validation {
            Validation::None => (x.clone(), y.clone(), None),
            Validation::Data(xv, yv) => (x.clone(), y.clone(), Some((xv.clone(), yv.clone()))),
            Validation::Split(frac) => {
                if !(0.0..1.0).contains(frac) {
                    return Err(Error::invalid(format!("validation split {frac} outside [0,1)")));
                }
                let n = x.rows();
                let cut = (n as f64 * (1.0 - frac)) as usize;
                let val = (cut < n).then(|| -> Result<_> {
                    Ok((x.slice_rows(cut, n)?, y.slice_rows(cut, n)?))
                });
                (x.slice_rows(0, cut)?, y.slice_rows(0, cut)?, val.transpose()?)
            }
        };
        let n = xt.rows();
        if n == 0 {
            return Err(Error::invalid("cannot fit on an empty dataset"));
        }

        let mut history = History::new(metric_names, val.is_some());
        let mut rng = Rng::new(config.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut batch_index = 0;
        for epoch in 1..=config.epochs {
            if config.shuffle {
                rng.shuffle(&mut order);
            }
            for chunk in order.chunks(config.batch_size) {
                let xb = xt.select_rows(chunk)?;
                let yb = yt.select_rows(chunk)?;
                let loss = self.train_on_batch(&xb, &yb)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        batch: batch_index,
                        value: loss,
                    });
                }
                batch_index += 1;
            }
            let train = self.evaluate(&xt, &yt)?;
            let valid = val.as_ref().map(|(xv, yv)| self.evaluate(xv, yv)).transpose()?;
            let log = EpochLog::new(epoch, &train, valid.as_ref());
            history.push(log.clone());
            let mut stop = false;
            for cb in callbacks.iter_mut() {
                if cb.on_epoch_end(&log, self)? == Control::Stop {
                    stop = true;
                }
            }
            if stop {
                break;
            }
        }
        for cb in callbacks.iter_mut() {
            cb.on_train_end(self)?;
        }
        Ok(history)
    }
}

fn metric_value(metric: Metric, y: &Tensor, out: &Tensor) -> Result<f64> {
    match metric {
        Metric::Accuracy => {
            out.expect_same_shape(y, "accuracy")?;
            let k = out.last_dim();
            if k == 1 {
                let pred = binarize(out.data());
                let hits = pred.iter().zip(y.data()).filter(|(p, t)| **p == t.round()).count();
                Ok(hits as f64 / y.len().max(1) as f64)
            } else {
                let rows = out.len() / k;
                let hits = out
                    .data()
                    .chunks(k)
                    .zip(y.data().chunks(k))
                    .filter(|(o, t)| argmax(o) == argmax(t))
                    .count();
                Ok(hits as f64 / rows.max(1) as f64)
            }
        }
    }
}

/// `(None, 32, 32, 3)`; variable extents print as `None`.
pub fn format_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = std::iter::once("None".to_string())
        .chain(shape.iter().map(|&d| {
            if d == 0 {
                "None".to_string()
            } else {
                d.to_string()
            }
        }))
        .collect();
    format!("({})", dims.join(", "))
}

fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
