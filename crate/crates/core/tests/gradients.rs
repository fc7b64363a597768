//! Finite-difference checks of every hand-written backward pass.

use proptest::prelude::*;
use scratchnet::activations::Activation;
use scratchnet::conv::{Conv2D, Padding, Pool2D, PoolKind};
use scratchnet::gan::GanTrainer;
use scratchnet::gradcheck::{check_layer, check_model, numeric_gradient, relative_error};
use scratchnet::layers::{ActivationLayer, BatchNorm, Dense, Dropout, Flatten, Layer, LayerSpec, Mode};
use scratchnet::losses::Loss;
use scratchnet::model::SequentialModel;
use scratchnet::optim::OptimizerKind;
use scratchnet::recurrent::{Embedding, Lstm, SimpleRnn, TimeDistributed};
use scratchnet::tensor::{Rng, Tensor};

const TOL: f64 = 1e-5;

fn run(layer: &mut dyn Layer, input_shape: &[usize], batch: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    layer.build(input_shape, &mut rng).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = Tensor::rand_normal(&mut rng, &shape, 0.0, 1.0);
    let report = check_layer(layer, &x, &mut rng, false).unwrap();
    assert!(report.max_rel_error.is_finite());
    report.max_rel_error
}

fn smooth_activations() -> [Activation; 5] {
    [
        Activation::Linear,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::LeakyRelu { slope: 0.2 },
        Activation::Softmax,
    ]
}

#[test]
fn dense_every_activation() {
    for (i, act) in smooth_activations().into_iter().chain([Activation::Relu]).enumerate() {
        let e = run(&mut Dense::new(4, act), &[5], 3, i as u64);
        assert!(e <= TOL, "{act:?}: {e:e}");
    }
}

#[test]
fn activation_layers() {
    for (i, act) in smooth_activations().into_iter().enumerate() {
        let e = run(&mut ActivationLayer::new(act), &[6], 4, 10 + i as u64);
        assert!(e <= TOL, "{act:?}: {e:e}");
    }
}

#[test]
fn batch_norm_with_batch_statistics() {
    let mut bn = BatchNorm::new(0.99, 1e-3).unwrap();
    bn.build(&[4], &mut Rng::new(0)).unwrap();
    bn.set_affine(Tensor::from_vec(vec![1.5, 0.5, -1.0, 2.0]), Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.0]))
        .unwrap();
    let x = Tensor::rand_normal(&mut Rng::new(1), &[6, 4], 2.0, 3.0);
    let r = check_layer(&mut bn, &x, &mut Rng::new(2), false).unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

#[test]
fn flatten_passes_gradients_through() {
    let e = run(&mut Flatten::new(), &[3, 2, 2], 2, 3);
    assert!(e <= TOL, "{e:e}");
}

#[test]
fn dropout_backward_uses_the_forward_mask() {
    let mut d = Dropout::new(0.4).unwrap();
    d.build(&[50], &mut Rng::new(0)).unwrap();
    let x = Tensor::rand_normal(&mut Rng::new(1), &[4, 50], 0.0, 1.0);
    let r = Tensor::rand_normal(&mut Rng::new(2), &[4, 50], 0.0, 1.0);
    d.reseed(9);
    let y = d.forward(&x, Mode::Train).unwrap();
    let g = d.backward(&r).unwrap();
    // The layer is linear in x for a fixed mask, so the Jacobian diagonal
    // is y / x wherever x is non-zero.
    for i in 0..x.len() {
        let scale = y.data()[i] / x.data()[i];
        assert!((g.data()[i] - scale * r.data()[i]).abs() < 1e-12);
    }
    let numeric = numeric_gradient(&x, 1e-5, |xp| {
        d.reseed(9);
        let out = d.forward(xp, Mode::Train)?;
        Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    })
    .unwrap();
    assert!(relative_error(&g, &numeric) <= TOL);
}

#[test]
fn conv_grid() {
    let mut worst: f64 = 0.0;
    let mut seed = 100;
    for k in 1..=3 {
        for s in 1..=2 {
            for padding in [Padding::Valid, Padding::Same] {
                for d in 1..=2 {
                    seed += 1;
                    let mut conv = Conv2D::new(3, k, s, padding, d, Activation::Tanh).unwrap();
                    let e = run(&mut conv, &[7, 6, 2], 2, seed);
                    assert!(e <= TOL, "k={k} s={s} {padding:?} d={d}: {e:e}");
                    worst = worst.max(e);
                }
            }
        }
    }
    assert!(worst > 0.0);
}

#[test]
fn conv_relu_and_pools() {
    let e = run(&mut Conv2D::new(2, 3, 1, Padding::Same, 1, Activation::Relu).unwrap(), &[5, 5, 3], 2, 7);
    assert!(e <= TOL, "{e:e}");
    for (i, kind) in [PoolKind::Max, PoolKind::Avg].into_iter().enumerate() {
        for (pool, stride) in [(2, 2), (3, 1), (2, 3)] {
            let e = run(&mut Pool2D::new(kind, pool, stride).unwrap(), &[7, 7, 2], 2, 20 + i as u64);
            assert!(e <= TOL, "{kind:?} {pool}/{stride}: {e:e}");
        }
    }
}

#[test]
fn simple_rnn_bptt() {
    for (i, (act, rs)) in [
        (Activation::Tanh, true),
        (Activation::Tanh, false),
        (Activation::Relu, true),
        (Activation::Sigmoid, false),
    ]
    .into_iter()
    .enumerate()
    {
        for t in 1..=5 {
            let e = run(&mut SimpleRnn::new(3, act, rs), &[t, 2], 2, 30 + (i * 10 + t) as u64);
            assert!(e <= TOL, "{act:?} rs={rs} T={t}: {e:e}");
        }
    }
}

#[test]
fn lstm_bptt() {
    for rs in [true, false] {
        for t in 1..=5 {
            let e = run(&mut Lstm::new(3, rs), &[t, 2], 2, 60 + t as u64 + u64::from(rs) * 10);
            assert!(e <= TOL, "rs={rs} T={t}: {e:e}");
        }
    }
}

#[test]
fn embedding_table_gradient() {
    let mut emb = Embedding::new(6, 3, true);
    emb.build(&[4], &mut Rng::new(0)).unwrap();
    let ids = Tensor::new([2, 4], vec![0.0, 5.0, 2.0, 2.0, 1.0, 0.0, 5.0, 3.0]).unwrap();
    let r = check_layer(&mut emb, &ids, &mut Rng::new(1), true).unwrap();
    assert!(r.max_rel_error <= TOL, "{r:?}");
}

#[test]
fn time_distributed_dense() {
    let e = run(&mut TimeDistributed::new(Dense::new(3, Activation::Sigmoid)), &[4, 5], 2, 80);
    assert!(e <= TOL, "{e:e}");
}

fn model_check(specs: &[LayerSpec], input: &[usize], loss: Loss, y_of: impl Fn(&mut Rng, usize) -> Tensor) -> f64 {
    let mut rng = Rng::new(5);
    let mut m = SequentialModel::new(specs).unwrap();
    m.build(input, &mut rng).unwrap();
    let mut shape = vec![3];
    shape.extend_from_slice(input);
    let x = Tensor::rand_normal(&mut rng, &shape, 0.0, 1.0);
    let y = y_of(&mut rng, 3);
    check_model(&mut m, &x, &y, loss).unwrap().max_rel_error
}

#[test]
fn fused_losses_through_models() {
    let e = model_check(
        &[LayerSpec::dense(4, Activation::Tanh), LayerSpec::dense(3, Activation::Softmax)],
        &[5],
        Loss::CategoricalCrossentropy,
        |_, n| {
            let mut y = Tensor::zeros(&[n, 3]);
            for i in 0..n {
                y.data_mut()[i * 3 + i % 3] = 1.0;
            }
            y
        },
    );
    assert!(e <= 1e-6, "cce {e:e}");
    let e = model_check(
        &[
            LayerSpec::dense(4, Activation::Tanh),
            LayerSpec::dense(2, Activation::Linear),
            LayerSpec::Activation {
                activation: Activation::Sigmoid,
            },
        ],
        &[5],
        Loss::BinaryCrossentropy,
        |rng, n| Tensor::rand_uniform(rng, &[n, 2], 0.0, 1.0),
    );
    assert!(e <= 1e-6, "bce {e:e}");
    for loss in [Loss::Mse, Loss::Mae] {
        let e = model_check(
            &[LayerSpec::dense(4, Activation::Sigmoid), LayerSpec::dense(2, Activation::Linear)],
            &[5],
            loss,
            |rng, n| Tensor::rand_normal(rng, &[n, 2], 0.0, 3.0),
        );
        assert!(e <= 1e-6, "{loss:?} {e:e}");
    }
}

#[test]
fn recurrent_classifier_end_to_end() {
    let e = model_check(
        &[
            LayerSpec::Lstm {
                units: 4,
                return_sequences: true,
            },
            LayerSpec::SimpleRnn {
                units: 3,
                activation: Activation::Tanh,
                return_sequences: false,
            },
            LayerSpec::dense(2, Activation::Softmax),
        ],
        &[4, 3],
        Loss::CategoricalCrossentropy,
        |_, n| {
            let mut y = Tensor::zeros(&[n, 2]);
            for i in 0..n {
                y.data_mut()[i * 2 + i % 2] = 1.0;
            }
            y
        },
    );
    assert!(e <= 1e-4, "{e:e}");
}

#[test]
fn conv_classifier_end_to_end() {
    let e = model_check(
        &[
            LayerSpec::conv2d(2, 3, Padding::Same, Activation::Tanh),
            LayerSpec::pool2d(PoolKind::Max, 2),
            LayerSpec::batch_norm(),
            LayerSpec::Flatten,
            LayerSpec::dense(3, Activation::Softmax),
        ],
        &[6, 6, 1],
        Loss::CategoricalCrossentropy,
        |_, n| {
            let mut y = Tensor::zeros(&[n, 3]);
            for i in 0..n {
                y.data_mut()[i * 3 + (i + 1) % 3] = 1.0;
            }
            y
        },
    );
    assert!(e <= 1e-5, "{e:e}");
}

#[test]
fn generator_gradient_through_frozen_discriminator() {
    let mut rng = Rng::new(11);
    let mut g = SequentialModel::new(&[
        LayerSpec::dense(4, Activation::LeakyRelu { slope: 0.2 }),
        LayerSpec::dense(3, Activation::Tanh),
    ])
    .unwrap();
    g.build(&[2], &mut rng).unwrap();
    let mut d = SequentialModel::new(&[
        LayerSpec::dense(5, Activation::LeakyRelu { slope: 0.2 }),
        LayerSpec::dense(1, Activation::Sigmoid),
    ])
    .unwrap();
    d.build(&[3], &mut rng).unwrap();
    let mut t = GanTrainer::new(g, d, OptimizerKind::sgd(0.1), OptimizerKind::sgd(0.1), 4).unwrap();
    let z = t.noise(&mut rng, 4);
    t.generator_backward(&z).unwrap();
    let grads: Vec<Tensor> = t.generator.params().iter().map(|p| p.grad.clone()).collect();
    for (i, analytic) in grads.iter().enumerate() {
        let value = t.generator.params()[i].value.clone();
        let numeric = numeric_gradient(&value, 1e-5, |v| {
            t.generator.params_mut()[i].value = v.clone();
            let p = t.discriminator.predict(&t.generator.predict(&z)?)?;
            Ok(-p.data().iter().map(|q| q.ln()).sum::<f64>() / p.len() as f64)
        })
        .unwrap();
        t.generator.params_mut()[i].value = value;
        let e = relative_error(analytic, &numeric);
        assert!(e <= 1e-4, "param {i}: {e:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dense_random_shapes(batch in 1usize..5, input in 1usize..6, units in 1usize..6, seed in 0u64..1000) {
        let e = run(&mut Dense::new(units, Activation::Tanh), &[input], batch, seed);
        prop_assert!(e <= TOL, "{}", e);
    }

    #[test]
    fn conv_random_geometry(k in 1usize..4, s in 1usize..3, d in 1usize..3, same in any::<bool>(), seed in 0u64..1000) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let e = run(&mut Conv2D::new(2, k, s, padding, d, Activation::Linear).unwrap(), &[7, 7, 2], 1, seed);
        prop_assert!(e <= TOL, "{}", e);
    }

    #[test]
    fn lstm_random_lengths(t in 1usize..6, units in 1usize..4, input in 1usize..4, seed in 0u64..1000) {
        let e = run(&mut Lstm::new(units, true), &[t, input], 2, seed);
        prop_assert!(e <= TOL, "{}", e);
    }
}
