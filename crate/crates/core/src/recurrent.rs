//! Recurrent layers over `[b, T, features]` inputs, trained by full
//! backpropagation through time, plus embedding lookup and time-distributed
//! dense heads.

use crate::activations::{activation_backward, sigmoid_scalar, Activation};
use crate::error::{Error, Result};
use crate::layers::{expect_rank, Dense, Init, Layer, LayerSpec, Mode, Param};
use crate::model::SequentialModel;
use crate::tensor::{argmax, Rng, Tensor};

/// Copies timestep `t` of a `[b, T, n]` tensor into a `[b, n]` tensor.
fn time_slice(x: &Tensor, t: usize) -> Tensor {
    let [b, steps, n] = x.shape()[..] else { unreachable!() };
    let mut out = Vec::with_capacity(b * n);
    for i in 0..b {
        let at = (i * steps + t) * n;
        out.extend_from_slice(&x.data()[at..at + n]);
    }
    Tensor::new([b, n], out).expect("slice shape")
}

/// Inverse of [`time_slice`] over all steps.
fn stack_steps(steps: &[Tensor]) -> Tensor {
    let [b, n] = steps[0].shape()[..] else { unreachable!() };
    let t = steps.len();
    let mut out = vec![0.0; b * t * n];
    for (s, step) in steps.iter().enumerate() {
        for i in 0..b {
            let at = (i * t + s) * n;
            out[at..at + n].copy_from_slice(step.row(i));
        }
    }
    Tensor::new([b, t, n], out).expect("stack shape")
}

fn sequence_input(x: &Tensor, features: usize, layer: &'static str) -> Result<(usize, usize)> {
    expect_rank(x, 3, layer)?;
    let [b, t, n] = x.shape()[..] else { unreachable!() };
    if n != features {
        return Err(Error::ShapeMismatch {
            op: layer,
            left: x.shape().to_vec(),
            right: vec![features],
        });
    }
    if t == 0 {
        return Err(Error::invalid(format!("{layer} received an empty sequence")));
    }
    Ok((b, t))
}

fn sequence_build(input_shape: &[usize], layer: &str) -> Result<(usize, usize)> {
    match input_shape[..] {
        [t, n] if n > 0 => Ok((t, n)),
        _ => Err(Error::invalid(format!(
            "{layer} expects a [T, features] input, got {input_shape:?}"
        ))),
    }
}

/// Splits an upstream gradient into per-step `[b, units]` pieces; a
/// last-step-only gradient becomes zeros for every earlier step.
fn upstream_steps(
    upstream: &Tensor,
    b: usize,
    t: usize,
    units: usize,
    return_sequences: bool,
) -> Result<Vec<Tensor>> {
    let want: Vec<usize> = if return_sequences {
        vec![b, t, units]
    } else {
        vec![b, units]
    };
    if upstream.shape() != want.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "recurrent backward",
            left: upstream.shape().to_vec(),
            right: want,
        });
    }
    Ok(if return_sequences {
        (0..t).map(|s| time_slice(upstream, s)).collect()
    } else {
        let mut steps = vec![Tensor::zeros(&[b, units]); t];
        steps[t - 1] = upstream.clone();
        steps
    })
}

/// Elman recurrence `h_t = f(x_t U + h_{t-1} W + b)` with `h_0 = 0`.
#[derive(Clone, Debug)]
pub struct SimpleRnn {
    units: usize,
    activation: Activation,
    return_sequences: bool,
    params: Vec<Param>,
    cache: Option<RnnCache>,
}

const RNN_U: usize = 0;
const RNN_W: usize = 1;
const RNN_B: usize = 2;

#[derive(Clone, Debug)]
struct RnnCache {
    xs: Vec<Tensor>,
    /// `hs[t]` is the state before step `t`; `hs[0]` is zero.
    hs: Vec<Tensor>,
    zs: Vec<Tensor>,
}

impl SimpleRnn {
    pub fn new(units: usize, activation: Activation, return_sequences: bool) -> Self {
        Self {
            units,
            activation,
            return_sequences,
            params: Vec::new(),
            cache: None,
        }
    }

    fn input_dim(&self) -> usize {
        self.params[RNN_U].value.shape()[0]
    }

    fn run(&self, x: &Tensor) -> Result<RnnCache> {
        let (b, t) = sequence_input(x, self.input_dim(), "simple_rnn")?;
        let (u, w, bias) = (
            &self.params[RNN_U].value,
            &self.params[RNN_W].value,
            &self.params[RNN_B].value,
        );
        let mut cache = RnnCache {
            xs: Vec::with_capacity(t),
            hs: vec![Tensor::zeros(&[b, self.units])],
            zs: Vec::with_capacity(t),
        };
        for s in 0..t {
            let xt = time_slice(x, s);
            let z = xt.matmul(u)?.add(&cache.hs[s].matmul(w)?)?.add(bias)?;
            cache.hs.push(self.activation.apply(&z));
            cache.xs.push(xt);
            cache.zs.push(z);
        }
        Ok(cache)
    }

    fn output(&self, cache: &RnnCache) -> Tensor {
        if self.return_sequences {
            stack_steps(&cache.hs[1..])
        } else {
            cache.hs.last().unwrap().clone()
        }
    }
}

impl Layer for SimpleRnn {
    fn kind(&self) -> &'static str {
        "simple_rnn"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::SimpleRnn {
            units: self.units,
            activation: self.activation,
            return_sequences: self.return_sequences,
        }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let (t, n) = sequence_build(input_shape, "simple_rnn")?;
        self.params = vec![
            Param::new("U", Init::Glorot.sample(rng, &[n, self.units])),
            Param::new("W", Init::Orthogonal.sample(rng, &[self.units, self.units])),
            Param::new("b", Tensor::zeros(&[self.units])),
        ];
        self.cache = None;
        Ok(if self.return_sequences {
            vec![t, self.units]
        } else {
            vec![self.units]
        })
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let cache = self.run(x)?;
        let out = self.output(&cache);
        self.cache = Some(cache);
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.output(&self.run(x)?))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("simple_rnn"))?;
        let t = cache.xs.len();
        let b = cache.xs[0].shape()[0];
        let ups = upstream_steps(upstream, b, t, self.units, self.return_sequences)?;
        let (u, w) = (&self.params[RNN_U].value, &self.params[RNN_W].value);
        let mut du = Tensor::zeros(u.shape());
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros(&[self.units]);
        let mut dxs = vec![Tensor::zeros(&[0]); t];
        let mut dh_next = Tensor::zeros(&[b, self.units]);
        for s in (0..t).rev() {
            let dh = ups[s].add(&dh_next)?;
            let dz = activation_backward(self.activation, &cache.zs[s], &dh)?;
            du.add_assign(&cache.xs[s].matmul_tn(&dz)?)?;
            dw.add_assign(&cache.hs[s].matmul_tn(&dz)?)?;
            db.add_assign(&dz.sum_rows())?;
            dxs[s] = dz.matmul_nt(u)?;
            dh_next = dz.matmul_nt(w)?;
        }
        self.params[RNN_U].grad = du;
        self.params[RNN_W].grad = dw;
        self.params[RNN_B].grad = db;
        Ok(stack_steps(&dxs))
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

/// Gate order inside [`Lstm`]'s parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Candidate = 2,
    Output = 3,
}

const GATES: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];
const GATE_SUFFIX: [&str; 4] = ["f", "i", "c", "o"];

/// Long short-term memory layer:
///
/// ```text
/// f_t = σ(h_{t-1} W_f + x_t U_f + b_f)
/// i_t = σ(h_{t-1} W_i + x_t U_i + b_i)
/// a_t = tanh(h_{t-1} W_c + x_t U_c + b_c)
/// o_t = σ(h_{t-1} W_o + x_t U_o + b_o)
/// c_t = f_t * c_{t-1} + i_t * a_t
/// h_t = o_t * tanh(c_t)
/// ```
///
/// Parameters are stored per gate as `W_g` (recurrent, `[units, units]`),
/// `U_g` (input, `[in, units]`) and `b_g`, in forget/input/candidate/output
/// order.
#[derive(Clone, Debug)]
pub struct Lstm {
    units: usize,
    return_sequences: bool,
    params: Vec<Param>,
    cache: Option<LstmCache>,
}

#[derive(Clone, Debug)]
struct LstmCache {
    xs: Vec<Tensor>,
    hs: Vec<Tensor>,
    cs: Vec<Tensor>,
    /// Gate activations per step, indexed by [`Gate`].
    gates: Vec<[Tensor; 4]>,
}

impl Lstm {
    pub fn new(units: usize, return_sequences: bool) -> Self {
        Self {
            units,
            return_sequences,
            params: Vec::new(),
            cache: None,
        }
    }

    fn w(&self, g: Gate) -> &Tensor {
        &self.params[3 * g as usize].value
    }

    fn u(&self, g: Gate) -> &Tensor {
        &self.params[3 * g as usize + 1].value
    }

    fn b(&self, g: Gate) -> &Tensor {
        &self.params[3 * g as usize + 2].value
    }

    /// Mutable access to a gate's `(W, U, b)` values.
    pub fn gate_mut(&mut self, g: Gate) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        let [w, u, b] = &mut self.params[3 * g as usize..3 * g as usize + 3] else {
            unreachable!()
        };
        (&mut w.value, &mut u.value, &mut b.value)
    }

    fn run(&self, x: &Tensor) -> Result<LstmCache> {
        let (b, t) = sequence_input(x, self.u(Gate::Forget).shape()[0], "lstm")?;
        let zero = Tensor::zeros(&[b, self.units]);
        let mut cache = LstmCache {
            xs: Vec::with_capacity(t),
            hs: vec![zero.clone()],
            cs: vec![zero],
            gates: Vec::with_capacity(t),
        };
        for s in 0..t {
            let xt = time_slice(x, s);
            let h = &cache.hs[s];
            let mut acts = Vec::with_capacity(4);
            for g in GATES {
                let mut z = h.matmul(self.w(g))?.add(&xt.matmul(self.u(g))?)?.add(self.b(g))?;
                if g == Gate::Candidate {
                    z.map_inplace(f64::tanh);
                } else {
                    z.map_inplace(sigmoid_scalar);
                }
                acts.push(z);
            }
            let [f, i, a, o]: [Tensor; 4] = acts.try_into().unwrap();
            let c = f.mul(&cache.cs[s])?.add(&i.mul(&a)?)?;
            let h = o.mul(&c.map(f64::tanh))?;
            cache.xs.push(xt);
            cache.hs.push(h);
            cache.cs.push(c);
            cache.gates.push([f, i, a, o]);
        }
        Ok(cache)
    }

    fn output(&self, cache: &LstmCache) -> Tensor {
        if self.return_sequences {
            stack_steps(&cache.hs[1..])
        } else {
            cache.hs.last().unwrap().clone()
        }
    }

    /// Runs the layer and returns the per-step gate activations
    /// `[f, i, a, o]` along with the cell states `c_1..c_T`.
    pub fn trace(&self, x: &Tensor) -> Result<(Vec<[Tensor; 4]>, Vec<Tensor>)> {
        let cache = self.run(x)?;
        Ok((cache.gates, cache.cs[1..].to_vec()))
    }
}

impl Layer for Lstm {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Lstm {
            units: self.units,
            return_sequences: self.return_sequences,
        }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let (t, n) = sequence_build(input_shape, "lstm")?;
        let units = self.units;
        self.params.clear();
        for (g, suffix) in GATES.iter().zip(GATE_SUFFIX) {
            // forget-gate bias starts at 1 so early training does not erase
            // the cell state
            let bias = if *g == Gate::Forget {
                Tensor::ones(&[units])
            } else {
                Tensor::zeros(&[units])
            };
            self.params.extend([
                Param::new(&format!("W_{suffix}"), Init::Orthogonal.sample(rng, &[units, units])),
                Param::new(&format!("U_{suffix}"), Init::Glorot.sample(rng, &[n, units])),
                Param::new(&format!("b_{suffix}"), bias),
            ]);
        }
        self.cache = None;
        Ok(if self.return_sequences {
            vec![t, units]
        } else {
            vec![units]
        })
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let cache = self.run(x)?;
        let out = self.output(&cache);
        self.cache = Some(cache);
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.output(&self.run(x)?))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("lstm"))?;
        let t = cache.xs.len();
        let b = cache.xs[0].shape()[0];
        let units = self.units;
        let ups = upstream_steps(upstream, b, t, units, self.return_sequences)?;
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let mut dxs = vec![Tensor::zeros(&[0]); t];
        let mut dh_next = Tensor::zeros(&[b, units]);
        let mut dc_next = Tensor::zeros(&[b, units]);
        for s in (0..t).rev() {
            let [f, i, a, o] = &cache.gates[s];
            let c = &cache.cs[s + 1];
            let c_prev = &cache.cs[s];
            let tc = c.map(f64::tanh);
            let dh = ups[s].add(&dh_next)?;
            let d_o = dh.mul(&tc)?;
            let dc = dc_next.add(&dh.mul(o)?.zip_map(&tc, |v, th| v * (1.0 - th * th))?)?;
            let df = dc.mul(c_prev)?;
            let di = dc.mul(a)?;
            let da = dc.mul(i)?;
            dc_next = dc.mul(f)?;

            let sig = |d: &Tensor, g: &Tensor| d.zip_map(g, |d, g| d * g * (1.0 - g));
            let dz = [
                sig(&df, f)?,
                sig(&di, i)?,
                da.zip_map(a, |d, a| d * (1.0 - a * a))?,
                sig(&d_o, o)?,
            ];
            let mut dx = Tensor::zeros(&[b, cache.xs[s].shape()[1]]);
            let mut dh_prev = Tensor::zeros(&[b, units]);
            for g in GATES {
                let k = 3 * g as usize;
                let d = &dz[g as usize];
                grads[k].add_assign(&cache.hs[s].matmul_tn(d)?)?;
                grads[k + 1].add_assign(&cache.xs[s].matmul_tn(d)?)?;
                grads[k + 2].add_assign(&d.sum_rows())?;
                dh_prev.add_assign(&d.matmul_nt(self.w(g))?)?;
                dx.add_assign(&d.matmul_nt(self.u(g))?)?;
            }
            dh_next = dh_prev;
            dxs[s] = dx;
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad = g;
        }
        Ok(stack_steps(&dxs))
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

/// Row lookup into a `[vocab, dim]` table. Inputs are integer ids stored as
/// reals, shape `[b, T]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    vocab: usize,
    dim: usize,
    trainable: bool,
    params: Vec<Param>,
    ids: Option<Tensor>,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, trainable: bool) -> Self {
        Self {
            vocab,
            dim,
            trainable,
            params: Vec::new(),
            ids: None,
        }
    }

    /// A built layer with a preset table, e.g. from pretrained vectors.
    pub fn from_table(table: Tensor, trainable: bool) -> Result<Self> {
        let [vocab, dim] = table.shape()[..] else {
            return Err(Error::invalid("embedding table must be [vocab, dim]"));
        };
        let mut layer = Self::new(vocab, dim, trainable);
        layer.params = vec![layer.param(table)];
        Ok(layer)
    }

    fn param(&self, table: Tensor) -> Param {
        if self.trainable {
            Param::new("embeddings", table)
        } else {
            Param::frozen("embeddings", table)
        }
    }

    fn check_ids(&self, ids: &Tensor) -> Result<Vec<usize>> {
        expect_rank(ids, 2, "embedding")?;
        ids.data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= self.vocab {
                    Err(Error::OutOfBounds(format!(
                        "embedding id {v} outside [0, {})",
                        self.vocab
                    )))
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }

    fn lookup(&self, x: &Tensor) -> Result<Tensor> {
        let ids = self.check_ids(x)?;
        let table = &self.params[0].value;
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            out.extend_from_slice(table.row(id));
        }
        Tensor::new([x.shape()[0], x.shape()[1], self.dim], out)
    }
}

impl Layer for Embedding {
    fn kind(&self) -> &'static str {
        "embedding"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Embedding {
            vocab: self.vocab,
            dim: self.dim,
            trainable: self.trainable,
        }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let [t] = input_shape[..] else {
            return Err(Error::invalid(format!(
                "embedding expects a [T] id input, got {input_shape:?}"
            )));
        };
        if self.params.is_empty() {
            let table = Tensor::rand_uniform(rng, &[self.vocab, self.dim], -0.05, 0.05);
            self.params = vec![self.param(table)];
        }
        self.ids = None;
        Ok(vec![t, self.dim])
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out = self.lookup(x)?;
        self.ids = Some(x.clone());
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.lookup(x)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let ids = self.ids.as_ref().ok_or(Error::BackwardBeforeForward("embedding"))?;
        let want = [ids.shape()[0], ids.shape()[1], self.dim];
        if upstream.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "embedding backward",
                left: upstream.shape().to_vec(),
                right: want.to_vec(),
            });
        }
        if self.trainable {
            let mut grad = Tensor::zeros(&[self.vocab, self.dim]);
            for (k, &id) in ids.data().iter().enumerate() {
                let src = &upstream.data()[k * self.dim..(k + 1) * self.dim];
                grad.row_mut(id as usize)
                    .iter_mut()
                    .zip(src)
                    .for_each(|(g, s)| *g += s);
            }
            self.params[0].grad = grad;
        }
        // ids are not differentiable
        Ok(Tensor::zeros(ids.shape()))
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

/// Applies one dense layer independently at every timestep.
#[derive(Clone, Debug)]
pub struct TimeDistributed {
    inner: Dense,
    steps: Option<(usize, usize)>,
}

impl TimeDistributed {
    pub fn new(inner: Dense) -> Self {
        Self { inner, steps: None }
    }

    pub fn inner(&self) -> &Dense {
        &self.inner
    }

    fn fold(x: &Tensor) -> Result<(usize, usize, Tensor)> {
        expect_rank(x, 3, "time_distributed")?;
        let [b, t, n] = x.shape()[..] else { unreachable!() };
        Ok((b, t, x.reshape(&[b * t, n])?))
    }

    fn unfold(&self, y: Tensor) -> Result<Tensor> {
        let (b, t) = self.steps.ok_or(Error::BackwardBeforeForward("time_distributed"))?;
        y.reshape(&[b, t, y.last_dim()])
    }

    fn flat_upstream(&self, upstream: &Tensor) -> Result<Tensor> {
        let (b, t) = self.steps.ok_or(Error::BackwardBeforeForward("time_distributed"))?;
        upstream.reshape(&[b * t, upstream.last_dim()])
    }
}

impl Layer for TimeDistributed {
    fn kind(&self) -> &'static str {
        "time_distributed"
    }

    fn spec(&self) -> LayerSpec {
        let LayerSpec::Dense {
            units, activation, ..
        } = self.inner.spec()
        else {
            unreachable!()
        };
        LayerSpec::TimeDistributed { units, activation }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let (t, n) = sequence_build(input_shape, "time_distributed")?;
        let out = self.inner.build(&[n], rng)?;
        Ok(vec![t, out[0]])
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (b, t, flat) = Self::fold(x)?;
        let y = self.inner.forward(&flat, mode)?;
        self.steps = Some((b, t));
        self.unfold(y)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, flat) = Self::fold(x)?;
        let y = self.inner.infer(&flat)?;
        y.reshape(&[b, t, y.last_dim()])
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let flat = self.flat_upstream(upstream)?;
        let dx = self.inner.backward(&flat)?;
        self.unfold(dx)
    }

    fn backward_from_logits(&mut self, dlogits: &Tensor) -> Result<Tensor> {
        let flat = self.flat_upstream(dlogits)?;
        let dx = self.inner.backward_from_logits(&flat)?;
        self.unfold(dx)
    }

    fn output_activation(&self) -> Option<Activation> {
        self.inner.output_activation()
    }

    fn params(&self) -> &[Param] {
        self.inner.params()
    }

    fn params_mut(&mut self) -> &mut [Param] {
        self.inner.params_mut()
    }
}

/// One-hot encodes an id history as a `[1, len, vocab]` tensor.
fn one_hot_history(ids: &[usize], vocab: usize) -> Tensor {
    let mut x = Tensor::zeros(&[1, ids.len(), vocab]);
    for (t, &id) in ids.iter().enumerate() {
        x.data_mut()[t * vocab + id] = 1.0;
    }
    x
}

/// Greedy decoding from a character model that maps one-hot sequences
/// `[1, T, vocab]` to per-step (or last-step) distributions over the vocab.
///
/// Starting from `seed_id`, feeds the last `window` ids, appends the argmax
/// of the final step's distribution and repeats. Returns `length + 1` ids.
pub fn generate_greedy(
    model: &SequentialModel,
    seed_id: usize,
    length: usize,
    window: usize,
) -> Result<Vec<usize>> {
    let vocab = *model
        .output_shape()
        .last()
        .ok_or(Error::NotCompiled)?;
    if seed_id >= vocab || window == 0 {
        return Err(Error::invalid(format!(
            "seed id {seed_id} / window {window} invalid for vocab {vocab}"
        )));
    }
    let mut ids = vec![seed_id];
    for _ in 0..length {
        let start = ids.len().saturating_sub(window);
        let probs = model.predict(&one_hot_history(&ids[start..], vocab))?;
        let last = &probs.data()[probs.len() - vocab..];
        ids.push(argmax(last));
    }
    Ok(ids)
}
