use std::cell::Cell;

use scratchnet::activations::Activation;
use scratchnet::layers::{LayerSpec, Mode};
use scratchnet::losses::Loss;
use scratchnet::metrics::Metric;
use scratchnet::model::{
    Callback, Control, EarlyStopping, EpochLog, FitConfig, ModelCheckpoint, Monitor, Periodic,
    SequentialModel, Validation,
};
use scratchnet::optim::{Optimizer, OptimizerKind};
use scratchnet::tensor::{Rng, Tensor};
use scratchnet::{Error, Result};

fn scratch_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("scratchnet-model-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Two Gaussian blobs separated along the diagonal.
fn blobs(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let centre = if label == 1.0 { 2.0 } else { -2.0 };
        x.push(centre + 0.5 * rng.normal());
        x.push(centre + 0.5 * rng.normal());
        y.push(label);
    }
    (Tensor::new([n, 2], x).unwrap(), Tensor::new([n, 1], y).unwrap())
}

fn logistic(seed: u64) -> SequentialModel {
    let mut m = SequentialModel::new(&[LayerSpec::dense(1, Activation::Sigmoid)]).unwrap();
    m.compile(&[2], Loss::BinaryCrossentropy, OptimizerKind::sgd(0.5), &[Metric::Accuracy], &mut Rng::new(seed))
        .unwrap();
    m
}

#[test]
fn separable_blobs_are_learned() {
    let (x, y) = blobs(200, 1);
    let mut m = logistic(2);
    let cfg = FitConfig {
        epochs: 50,
        ..FitConfig::default()
    };
    let h = m.fit(&x, &y, &cfg, &mut []).unwrap();
    assert_eq!(h.len(), 50);
    let acc = m.evaluate(&x, &y).unwrap().metric(Metric::Accuracy).unwrap();
    assert!(acc >= 0.95, "{acc}");
    let last = h.last().unwrap();
    let eval = m.evaluate(&x, &y).unwrap();
    assert!((eval.loss - last.loss).abs() <= 1e-9);
    assert!((eval.metrics[0].1 - last.metrics[0]).abs() <= 1e-9);
}

#[test]
fn linear_fit_of_y_equals_two_x() {
    let x = Tensor::new([8, 1], (0..8).map(|v| v as f64 / 4.0 - 1.0).collect()).unwrap();
    let y = x.scale(2.0);
    let mut m = SequentialModel::new(&[LayerSpec::dense(1, Activation::Linear)]).unwrap();
    m.compile(&[1], Loss::Mse, OptimizerKind::sgd(0.1), &[], &mut Rng::new(0)).unwrap();
    let cfg = FitConfig {
        batch_size: 8,
        epochs: 2000,
        ..FitConfig::default()
    };
    m.fit(&x, &y, &cfg, &mut []).unwrap();
    assert!(m.evaluate(&x, &y).unwrap().loss <= 1e-6);
}

#[test]
fn full_batch_step_equals_mean_of_minibatch_gradients() {
    let mut rng = Rng::new(3);
    let x = Tensor::rand_normal(&mut rng, &[12, 4], 0.0, 1.0);
    let y = Tensor::rand_normal(&mut rng, &[12, 2], 0.0, 1.0);
    let mut base = SequentialModel::new(&[LayerSpec::dense(2, Activation::Linear)]).unwrap();
    base.build(&[4], &mut Rng::new(4)).unwrap();
    let w0 = base.weights();

    let grads = |m: &mut SequentialModel, xs: &Tensor, ys: &Tensor| -> Vec<Tensor> {
        let out = m.forward(xs, Mode::Train).unwrap();
        let lv = Loss::Mse.evaluate(ys, &out).unwrap();
        m.backward(&lv.grad, false).unwrap();
        m.params().iter().map(|p| p.grad.clone()).collect()
    };
    let full = grads(&mut base, &x, &y);
    let mut avg: Vec<Tensor> = full.iter().map(|g| Tensor::zeros(g.shape())).collect();
    for k in 0..3 {
        let xs = x.slice_rows(4 * k, 4 * k + 4).unwrap();
        let ys = y.slice_rows(4 * k, 4 * k + 4).unwrap();
        for (a, g) in avg.iter_mut().zip(grads(&mut base, &xs, &ys)) {
            a.add_assign(&g.scale(1.0 / 3.0)).unwrap();
        }
    }
    let mut opt = Optimizer::new(OptimizerKind::sgd(0.1));
    let mut stepped_full = w0.clone();
    opt.step_tensors(&mut stepped_full, &full).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::sgd(0.1));
    let mut stepped_avg = w0;
    opt.step_tensors(&mut stepped_avg, &avg).unwrap();
    for (a, b) in stepped_full.iter().zip(&stepped_avg) {
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-10);
        }
    }
}

/// Reports a fixed loss sequence in place of the real one.
struct Scripted<'a> {
    inner: EarlyStopping,
    losses: &'a [f64],
    weights_at: Vec<Vec<Tensor>>,
}

impl Callback for Scripted<'_> {
    fn on_epoch_end(&mut self, log: &EpochLog, model: &mut SequentialModel) -> Result<Control> {
        self.weights_at.push(model.weights());
        let mut fake = log.clone();
        fake.loss = self.losses[log.epoch - 1];
        self.inner.on_epoch_end(&fake, model)
    }

    fn on_train_end(&mut self, model: &mut SequentialModel) -> Result<()> {
        self.inner.on_train_end(model)
    }
}

#[test]
fn early_stopping_halts_at_best_plus_patience_and_restores() {
    let (x, y) = blobs(64, 5);
    let mut m = logistic(6);
    let losses = [1.0, 0.8, 0.5, 0.6, 0.55, 0.7, 0.9, 0.51, 0.4, 0.3];
    let mut cb = Scripted {
        inner: EarlyStopping::new(Monitor::Loss, 0.0, 3, true),
        losses: &losses,
        weights_at: Vec::new(),
    };
    let cfg = FitConfig {
        epochs: 10,
        ..FitConfig::default()
    };
    let h = m.fit(&x, &y, &cfg, &mut [&mut cb]).unwrap();
    assert_eq!(cb.inner.best_epoch(), 3);
    assert_eq!(cb.inner.stopped_epoch(), Some(6));
    assert_eq!(h.len(), 6);
    let best = &cb.weights_at[2];
    let mut reference = logistic(6);
    reference.set_weights(best).unwrap();
    assert_eq!(m.predict(&x).unwrap(), reference.predict(&x).unwrap());
}

#[test]
fn min_delta_counts_small_gains_as_stagnation() {
    let mut es = EarlyStopping::new(Monitor::Loss, 0.1, 2, false);
    let mut m = logistic(0);
    let log = |epoch, loss| EpochLog {
        epoch,
        loss,
        metrics: vec![],
        val_loss: None,
        val_metrics: vec![],
    };
    assert_eq!(es.on_epoch_end(&log(1, 1.0), &mut m).unwrap(), Control::Continue);
    assert_eq!(es.on_epoch_end(&log(2, 0.95), &mut m).unwrap(), Control::Continue);
    assert_eq!(es.on_epoch_end(&log(3, 0.91), &mut m).unwrap(), Control::Stop);
    let mut v = EarlyStopping::new(Monitor::ValLoss, 0.0, 1, false);
    assert!(v.on_epoch_end(&log(1, 1.0), &mut m).is_err());
}

#[test]
fn evaluation_is_stable_with_dropout_and_batch_norm() {
    let (x, y) = blobs(40, 8);
    let mut m = SequentialModel::new(&[
        LayerSpec::dense(8, Activation::Relu),
        LayerSpec::batch_norm(),
        LayerSpec::dropout(0.5),
        LayerSpec::dense(1, Activation::Sigmoid),
    ])
    .unwrap();
    m.compile(&[2], Loss::BinaryCrossentropy, OptimizerKind::adam(1e-2), &[Metric::Accuracy], &mut Rng::new(1))
        .unwrap();
    let cfg = FitConfig {
        epochs: 3,
        batch_size: 8,
        validation: Validation::Split(0.25),
        ..FitConfig::default()
    };
    let h = m.fit(&x, &y, &cfg, &mut []).unwrap();
    assert_eq!(h.series("val_loss").len(), 3);
    assert!(h.to_csv().starts_with("epoch,loss,accuracy,val_loss,val_accuracy\n"));
    let a = m.evaluate(&x, &y).unwrap();
    let b = m.evaluate(&x, &y).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
}

#[test]
fn nan_loss_names_the_batch() {
    let (mut x, y) = blobs(16, 2);
    x.data_mut()[2 * 9] = f64::NAN;
    let mut m = SequentialModel::new(&[LayerSpec::dense(1, Activation::Linear)]).unwrap();
    m.compile(&[2], Loss::Mse, OptimizerKind::sgd(0.1), &[], &mut Rng::new(0)).unwrap();
    let cfg = FitConfig {
        batch_size: 4,
        shuffle: false,
        ..FitConfig::default()
    };
    let err = m.fit(&x, &y, &cfg, &mut []).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { batch: 2, .. }), "{err}");
}

#[test]
fn save_load_and_weight_loading() {
    let dir = scratch_dir("io");
    let (x, y) = blobs(32, 3);
    let mut m = SequentialModel::new(&[
        LayerSpec::dense(6, Activation::Tanh),
        LayerSpec::dense(1, Activation::Sigmoid),
    ])
    .unwrap();
    m.compile(&[2], Loss::BinaryCrossentropy, OptimizerKind::rmsprop(1e-2), &[Metric::Accuracy], &mut Rng::new(0))
        .unwrap();
    m.fit(&x, &y, &FitConfig::default(), &mut []).unwrap();
    let path = dir.join("m.gbk");
    m.save(&path).unwrap();
    let back = SequentialModel::load(&path).unwrap();
    assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    assert_eq!(back.evaluate(&x, &y).unwrap().loss, m.evaluate(&x, &y).unwrap().loss);

    let mut same = SequentialModel::new(&m.specs()).unwrap();
    same.build(&[2], &mut Rng::new(99)).unwrap();
    same.load_weights(&path).unwrap();
    assert_eq!(same.predict(&x).unwrap(), m.predict(&x).unwrap());

    let mut other = SequentialModel::new(&[
        LayerSpec::dense(6, Activation::Tanh),
        LayerSpec::dense(3, Activation::Tanh),
        LayerSpec::dense(1, Activation::Sigmoid),
    ])
    .unwrap();
    other.build(&[2], &mut Rng::new(0)).unwrap();
    let err = other.load_weights(&path).unwrap_err();
    assert!(matches!(err, Error::ArchitectureMismatch { index: 1, .. }), "{err}");
}

#[test]
fn checkpoints_follow_the_best_value() {
    let dir = scratch_dir("ckpt");
    let (x, y) = blobs(32, 4);
    let mut m = logistic(1);
    let pattern = dir.join("w_{epoch:03d}_{loss:.4f}.gbk").to_string_lossy().into_owned();
    let mut ck = ModelCheckpoint::new(pattern, Monitor::Loss, true);
    let cfg = FitConfig {
        epochs: 4,
        ..FitConfig::default()
    };
    let h = m.fit(&x, &y, &cfg, &mut [&mut ck]).unwrap();
    assert!(!ck.saved().is_empty());
    let last = ck.saved().last().unwrap();
    let name = last.file_name().unwrap().to_string_lossy().into_owned();
    let losses = h.series("loss");
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let best_epoch = losses.iter().position(|&l| l == best).unwrap() + 1;
    assert_eq!(name, format!("w_{best_epoch:03}_{best:.4}.gbk"));
    let loaded = SequentialModel::load(last).unwrap();
    assert!((loaded.evaluate(&x, &y).unwrap().loss - best).abs() <= 1e-12);
}

#[test]
fn periodic_hook_schedule() {
    let (x, y) = blobs(16, 4);
    let mut m = logistic(1);
    let fired = Cell::new(Vec::new());
    let mut hook = Periodic::new(3, |log: &EpochLog, _: &mut SequentialModel| {
        let mut v = fired.take();
        v.push(log.epoch);
        fired.set(v);
        Ok(())
    });
    let cfg = FitConfig {
        epochs: 8,
        ..FitConfig::default()
    };
    m.fit(&x, &y, &cfg, &mut [&mut hook]).unwrap();
    assert_eq!(fired.take(), vec![1, 4, 7]);
}

#[test]
fn incompatible_layers_are_named() {
    let mut m = SequentialModel::new(&[LayerSpec::Flatten, LayerSpec::dense(3, Activation::Relu)]).unwrap();
    let err = m.build(&[0, 4], &mut Rng::new(0)).unwrap_err();
    assert!(matches!(err, Error::IncompatibleLayers { index: 0, .. }), "{err}");
    let mut m = SequentialModel::new(&[LayerSpec::dense(3, Activation::Relu)]).unwrap();
    assert!(matches!(
        m.compile(&[2], Loss::CategoricalCrossentropy, OptimizerKind::sgd(0.1), &[], &mut Rng::new(0)),
        Err(Error::InvalidArgument(_))
    ));
}
