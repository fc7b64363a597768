//! Property tests for the numeric invariants of each module.

use proptest::prelude::*;
use scratchnet::activations::{activation_backward, softmax, Activation};
use scratchnet::conv::{conv_out_extent, Conv2D, Padding, Pool2D, PoolKind};
use scratchnet::data::{build_char_dataset, pad_sequences, MinMaxScaler, Side, Tokenizer};
use scratchnet::layers::{Dropout, Layer, Mode, Param};
use scratchnet::losses::{binary_crossentropy, categorical_crossentropy_probs, mae, mse};
use scratchnet::metrics::confusion;
use scratchnet::optim::{Optimizer, OptimizerKind};
use scratchnet::perceptron::{Gate, Perceptron};
use scratchnet::recurrent::{Lstm, SimpleRnn};
use scratchnet::tensor::{argmax, Rng, Tensor};

fn tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::rand_normal(&mut Rng::new(seed), &[rows, cols], 0.0, 1.0)
}

#[test]
fn rng_stream_matches_reference_xoshiro() {
    // SplitMix64 seeding followed by xoshiro256**, computed independently.
    let mut r = Rng::new(42);
    let got: Vec<u64> = (0..3).map(|_| r.next_u64()).collect();
    assert_eq!(got, vec![1_546_998_764_402_558_742, 6_990_951_692_964_543_102, 12_544_586_762_248_559_009]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6, seed in any::<u64>()) {
        let a = tensor(m, k, seed);
        let b = tensor(k, n, seed ^ 1);
        let c = tensor(n, p, seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.norm().max(1e-12);
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() / scale <= 1e-9);
        }
    }

    #[test]
    fn elementwise_ops_commute(r in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let a = tensor(r, c, seed);
        let b = tensor(r, c, seed.wrapping_add(7));
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.mul(&b).unwrap(), b.mul(&a).unwrap());
    }

    #[test]
    fn sum_matches_sequential_accumulation(n in 1usize..10_000, seed in any::<u64>()) {
        let t = Tensor::rand_normal(&mut Rng::new(seed), &[n], 0.0, 1.0);
        let mut acc = 0.0;
        for v in t.data() {
            acc += v;
        }
        prop_assert!((t.sum() - acc).abs() <= 1e-12 * t.data().iter().map(|v| v.abs()).sum::<f64>().max(1.0));
    }

    #[test]
    fn reshape_round_trip(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let t = Tensor::rand_normal(&mut Rng::new(seed), &[a, b, c], 0.0, 1.0);
        let back = t.reshape(&[a * b * c]).unwrap().reshape(&[a, b, c]).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn activation_ranges_and_monotonicity(x in -50.0f64..50.0, dx in 0.0f64..5.0) {
        let s = Activation::Sigmoid;
        let at = |a: Activation, v: f64| a.apply(&Tensor::scalar(v)).data()[0];
        let sx = at(s, x.clamp(-30.0, 30.0));
        prop_assert!(sx > 0.0 && sx < 1.0);
        let tx = at(Activation::Tanh, x.clamp(-15.0, 15.0));
        prop_assert!(tx > -1.0 && tx < 1.0);
        prop_assert!(at(Activation::Relu, x) >= 0.0);
        for a in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::LeakyRelu { slope: 0.1 }] {
            prop_assert!(at(a, x + dx) >= at(a, x));
        }
    }

    #[test]
    fn activation_derivatives_match_differences(x in -6.0f64..6.0) {
        prop_assume!(x.abs() >= 1e-3);
        let h = 1e-6;
        for a in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::LeakyRelu { slope: 0.3 }] {
            let f = |v: f64| a.apply(&Tensor::scalar(v)).data()[0];
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            let g = activation_backward(a, &Tensor::scalar(x), &Tensor::scalar(1.0)).unwrap().data()[0];
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1.0), "{:?} {} {}", a, g, fd);
        }
    }

    #[test]
    fn softmax_rows_and_shift_invariance(r in 1usize..4, c in 1usize..6, shift in -100.0f64..100.0, seed in any::<u64>()) {
        let z = tensor(r, c, seed).scale(5.0);
        let p = softmax(&z);
        let q = softmax(&z.map(|v| v + shift));
        for i in 0..r {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert_eq!(argmax(p.row(i)), argmax(z.row(i)));
        }
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_are_non_negative(r in 1usize..5, c in 1usize..4, seed in any::<u64>()) {
        let y = tensor(r, c, seed);
        let yhat = tensor(r, c, seed ^ 9);
        prop_assert!(mse(&y, &yhat).unwrap().value >= 0.0);
        prop_assert!(mae(&y, &yhat).unwrap().value >= 0.0);
        prop_assert_eq!(mse(&y, &yhat).unwrap().value, mse(&yhat, &y).unwrap().value);
        prop_assert_eq!(mse(&y, &y).unwrap().value, 0.0);
        let p = yhat.map(|v| 1.0 / (1.0 + (-v).exp()));
        let t = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        prop_assert!(binary_crossentropy(&p, &t).unwrap().value >= 0.0);
        prop_assert!(binary_crossentropy(&t, &t).unwrap().value < 1e-6);
        let probs = softmax(&yhat);
        let mut onehot = Tensor::zeros(&[r, c]);
        for i in 0..r {
            onehot.data_mut()[i * c + argmax(y.row(i))] = 1.0;
        }
        prop_assert!(categorical_crossentropy_probs(&probs, &onehot).unwrap().value >= 0.0);
        prop_assert!(categorical_crossentropy_probs(&onehot, &onehot).unwrap().value < 1e-6);
    }

    #[test]
    fn metric_bounds(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let t: Vec<f64> = bits.iter().map(|b| f64::from(u8::from(b.0))).collect();
        let p: Vec<f64> = bits.iter().map(|b| f64::from(u8::from(b.1))).collect();
        let cm = confusion(&t, &p).unwrap();
        let errors = bits.iter().filter(|b| b.0 != b.1).count() as f64 / bits.len() as f64;
        prop_assert!((cm.accuracy().value - (1.0 - errors)).abs() < 1e-12);
        for m in [cm.accuracy(), cm.precision(), cm.recall(), cm.f1()] {
            prop_assert!((0.0..=1.0).contains(&m.value));
        }
        let (pr, rc, f1) = (cm.precision(), cm.recall(), cm.f1());
        if pr.defined && rc.defined && f1.defined {
            prop_assert!(f1.value <= pr.value.max(rc.value) + 1e-12);
            prop_assert!(f1.value >= pr.value.min(rc.value) - 1e-12);
        }
    }

    #[test]
    fn conv_output_extent(w in 3usize..10, k in 1usize..4, s in 1usize..3, d in 1usize..3, same in any::<bool>()) {
        let eff = d * (k - 1) + 1;
        prop_assume!(same || eff <= w);
        let padding = if same { Padding::Same } else { Padding::Valid };
        let mut conv = Conv2D::new(2, k, s, padding, d, Activation::Linear).unwrap();
        let out = conv.build(&[w, w, 1], &mut Rng::new(0)).unwrap();
        let expect = if same { w.div_ceil(s) } else { conv_out_extent(w, k, s, 0, d).unwrap() };
        prop_assert_eq!(out, vec![expect, expect, 2]);
        let y = conv.forward(&Tensor::zeros(&[1, w, w, 1]), Mode::Train).unwrap();
        prop_assert_eq!(&y.shape()[1..], &[expect, expect, 2][..]);
    }

    #[test]
    fn conv_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let mut conv = Conv2D::new(2, 3, 1, Padding::Same, 1, Activation::Linear).unwrap();
        conv.build(&[5, 5, 2], &mut rng).unwrap();
        conv.params_mut()[1].value.fill(0.0);
        let x1 = Tensor::rand_normal(&mut rng, &[1, 5, 5, 2], 0.0, 1.0);
        let x2 = Tensor::rand_normal(&mut rng, &[1, 5, 5, 2], 0.0, 1.0);
        let mix = x1.scale(alpha).add(&x2.scale(beta)).unwrap();
        let lhs = conv.infer(&mix).unwrap();
        let rhs = conv.infer(&x1).unwrap().scale(alpha).add(&conv.infer(&x2).unwrap().scale(beta)).unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn max_pool_dominates_avg_pool(pool in 1usize..4, stride in 1usize..4, seed in any::<u64>()) {
        let x = Tensor::rand_normal(&mut Rng::new(seed), &[2, 6, 6, 3], 0.0, 1.0);
        let mut mx = Pool2D::new(PoolKind::Max, pool, stride).unwrap();
        let mut av = Pool2D::new(PoolKind::Avg, pool, stride).unwrap();
        mx.build(&[6, 6, 3], &mut Rng::new(0)).unwrap();
        av.build(&[6, 6, 3], &mut Rng::new(0)).unwrap();
        let (a, b) = (mx.infer(&x).unwrap(), av.infer(&x).unwrap());
        for (m, v) in a.data().iter().zip(b.data()) {
            prop_assert!(m >= v);
        }
    }

    #[test]
    fn recurrent_last_step_matches_sequence(t in 1usize..7, seed in any::<u64>()) {
        let x = Tensor::rand_normal(&mut Rng::new(seed), &[2, t, 3], 0.0, 1.0);
        let mut seq = Lstm::new(4, true);
        seq.build(&[t, 3], &mut Rng::new(seed ^ 5)).unwrap();
        let mut last = Lstm::new(4, false);
        last.build(&[t, 3], &mut Rng::new(seed ^ 5)).unwrap();
        let full = seq.infer(&x).unwrap();
        let end = last.infer(&x).unwrap();
        for b in 0..2 {
            for u in 0..4 {
                prop_assert_eq!(full.data()[(b * t + t - 1) * 4 + u], end.data()[b * 4 + u]);
            }
        }
        let (gates, _) = seq.trace(&x).unwrap();
        for step in &gates {
            for g in [&step[0], &step[1], &step[3]] {
                prop_assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
        let mut rnn = SimpleRnn::new(3, Activation::Tanh, true);
        rnn.build(&[t, 3], &mut Rng::new(seed)).unwrap();
        prop_assert!(rnn.infer(&x).unwrap().data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn dropout_identity_cases(seed in any::<u64>()) {
        let x = tensor(3, 7, seed);
        let mut d = Dropout::new(0.0).unwrap();
        d.build(&[7], &mut Rng::new(0)).unwrap();
        prop_assert_eq!(d.forward(&x, Mode::Train).unwrap(), x.clone());
        let mut d = Dropout::new(0.5).unwrap();
        d.build(&[7], &mut Rng::new(0)).unwrap();
        prop_assert_eq!(d.infer(&x).unwrap(), x);
    }

    #[test]
    fn char_targets_are_next_characters(text in "[a-e ]{2,60}", seq in 1usize..6) {
        prop_assume!(text.chars().count() > seq);
        let ds = build_char_dataset(&text, seq).unwrap();
        let (x, y) = ds.to_tensors().unwrap();
        let chars: Vec<char> = text.chars().collect();
        let v = ds.vocab.len();
        for i in 0..ds.len() {
            for j in 0..seq {
                let at = (i * seq + j) * v;
                let xi = argmax(&x.data()[at..at + v]);
                let yi = argmax(&y.data()[at..at + v]);
                prop_assert_eq!(ds.vocab.char_at(xi), Some(chars[i * seq + j]));
                prop_assert_eq!(ds.vocab.char_at(yi), Some(chars[i * seq + j + 1]));
            }
        }
    }

    #[test]
    fn tokenizer_ranks_are_dense(words in proptest::collection::vec("[a-d]{1,3}", 1..40)) {
        let text = words.join(" ");
        let mut tok = Tokenizer::new(None);
        tok.fit_on_texts(&[text.as_str()]);
        let vocab = tok.words().len();
        let mut ranks: Vec<usize> = tok.words().iter().map(|w| tok.rank(w).unwrap()).collect();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (1..=vocab).collect::<Vec<_>>());
        let count = |w: &str| words.iter().filter(|x| x.as_str() == w).count();
        let top = count(&tok.words()[0]);
        prop_assert!(words.iter().all(|w| count(w) <= top));
    }

    #[test]
    fn padding_is_rectangular(seqs in proptest::collection::vec(proptest::collection::vec(1usize..50, 0..12), 0..8), maxlen in 1usize..10, pre in any::<bool>()) {
        let side = if pre { Side::Pre } else { Side::Post };
        let p = pad_sequences(&seqs, maxlen, side, side);
        prop_assert_eq!(p.shape(), &[seqs.len(), maxlen][..]);
    }

    #[test]
    fn scaler_maps_to_unit_interval(r in 2usize..20, c in 1usize..5, seed in any::<u64>()) {
        let x = tensor(r, c, seed).scale(100.0);
        let (_, t) = MinMaxScaler::fit_transform(&x).unwrap();
        for j in 0..c {
            let col: Vec<f64> = (0..r).map(|i| t.data()[i * c + j]).collect();
            prop_assert_eq!(col.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            prop_assert_eq!(col.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }
}

fn every_optimizer() -> Vec<OptimizerKind> {
    vec![
        OptimizerKind::sgd(1e-3),
        OptimizerKind::momentum(1e-3, 0.9),
        OptimizerKind::nesterov(1e-3, 0.9),
        OptimizerKind::adagrad(1e-3),
        OptimizerKind::adadelta(),
        OptimizerKind::rmsprop(1e-3),
        OptimizerKind::adam(1e-3),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_rule_descends_a_convex_bowl(theta in proptest::collection::vec(0.2f64..3.0, 1..6)) {
        for kind in every_optimizer() {
            let mut opt = Optimizer::new(kind);
            let mut p = Param::new("theta", Tensor::from_vec(theta.clone()));
            let mut prev = p.value.data().iter().map(|v| v * v).sum::<f64>();
            for _ in 0..100 {
                p.grad = p.value.scale(2.0);
                opt.step(&mut [&mut p]).unwrap();
                let now = p.value.data().iter().map(|v| v * v).sum::<f64>();
                prop_assert!(now < prev + 1e-12, "{} rose from {} to {}", kind.name(), prev, now);
                prop_assert!(now.is_finite());
                prev = now;
            }
        }
    }

    #[test]
    fn zero_gamma_reduces_to_sgd(theta in proptest::collection::vec(-3.0f64..3.0, 1..6), lr in 1e-4f64..0.5) {
        let run = |kind: OptimizerKind| {
            let mut opt = Optimizer::new(kind);
            let mut p = Param::new("theta", Tensor::from_vec(theta.clone()));
            for _ in 0..10 {
                p.grad = p.value.map(f64::sin);
                opt.step(&mut [&mut p]).unwrap();
            }
            p.value
        };
        let sgd = run(OptimizerKind::sgd(lr));
        prop_assert_eq!(run(OptimizerKind::momentum(lr, 0.0)), sgd.clone());
        prop_assert_eq!(run(OptimizerKind::nesterov(lr, 0.0)), sgd);
    }
}

fn steps_to_reach(kind: OptimizerKind, limit: usize) -> Option<usize> {
    let mut opt = Optimizer::new(kind);
    let mut p = Param::new("theta", Tensor::from_vec(vec![1.0, 1.0]));
    for step in 1..=limit {
        p.grad = Tensor::from_vec(vec![2.0 * p.value.data()[0], 200.0 * p.value.data()[1]]);
        opt.step(&mut [&mut p]).unwrap();
        if p.value.norm() < 1e-3 {
            return Some(step);
        }
    }
    None
}

#[test]
fn momentum_crosses_the_narrow_valley_faster() {
    // Plain descent is stable for lr < 2 / 200 on the stiff axis.
    let lr = 0.0099;
    let sgd = steps_to_reach(OptimizerKind::sgd(lr), 100_000).unwrap();
    let momentum = steps_to_reach(OptimizerKind::momentum(lr, 0.9), 100_000).unwrap();
    assert!(momentum < sgd, "momentum {momentum} vs sgd {sgd}");
    assert!(steps_to_reach(OptimizerKind::sgd(0.0101), 100_000).is_none());
}

#[test]
fn adadelta_has_no_learning_rate() {
    assert_eq!(OptimizerKind::adadelta().lr(), None);
    assert!(Optimizer::new(OptimizerKind::adadelta()).set_lr(0.1).is_err());
}

#[test]
fn perceptron_separable_gates_converge() {
    for gate in [Gate::Or, Gate::And] {
        let (x, y) = gate.dataset();
        let mut p = Perceptron::zeros(2, 0.1);
        p.fit(&x, &y, 20).unwrap();
        assert_eq!(p.predict(&x).unwrap(), y, "{gate:?} from zeros");
        // From a random start the mistake bound depends on the initial
        // weights, so allow a longer budget than the 20 epochs above.
        for seed in 0..100 {
            let mut p = Perceptron::new(2, 0.1, &mut Rng::new(seed));
            p.fit(&x, &y, 100).unwrap();
            assert_eq!(p.predict(&x).unwrap(), y, "{gate:?} seed {seed}");
        }
    }
}

#[test]
fn perceptron_never_solves_xor() {
    let (x, y) = Gate::Xor.dataset();
    for seed in 0..100 {
        let mut p = Perceptron::new(2, 0.1, &mut Rng::new(seed));
        for _ in 0..50 {
            p.fit(&x, &y, 1).unwrap();
            assert!(p.accuracy(&x, &y).unwrap() <= 0.75, "seed {seed}");
        }
    }
}

proptest! {
    #[test]
    fn perceptron_positive_scaling_is_harmless(w in proptest::collection::vec(-2.0f64..2.0, 3), c in 0.01f64..100.0) {
        let (x, _) = Gate::Or.dataset();
        let p = Perceptron { w: w.clone(), alpha: 0.1 };
        let q = Perceptron { w: w.iter().map(|v| v * c).collect(), alpha: 0.1 };
        prop_assert_eq!(p.predict(&x).unwrap(), q.predict(&x).unwrap());
    }
}
