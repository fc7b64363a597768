//! 2-D convolution and pooling over channel-last `[b, H, W, c]` tensors.
//!
//! The convolution is a cross-correlation (no kernel flip), lowered to a
//! matrix product over extracted patches.

use serde::{Deserialize, Serialize};

use crate::activations::{activation_backward, Activation};
use crate::error::{Error, Result};
use crate::layers::{expect_rank, Init, Layer, LayerSpec, Mode, Param};
use crate::tensor::{Rng, Tensor};

/// Output extent of a convolution along one axis:
/// `floor((w + 2p - k - (k - 1)(d - 1)) / s) + 1`.
pub fn conv_out_extent(w: usize, k: usize, s: usize, p: usize, d: usize) -> Result<usize> {
    if k == 0 || s == 0 || d == 0 {
        return Err(Error::invalid(format!(
            "kernel {k}, stride {s} and dilation {d} must be positive"
        )));
    }
    let effective = k + (k - 1) * (d - 1);
    let padded = w + 2 * p;
    if effective > padded {
        return Err(Error::invalid(format!(
            "effective kernel {effective} (k={k}, d={d}) exceeds padded extent {padded} (w={w}, p={p})"
        )));
    }
    Ok((padded - effective) / s + 1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Output extent `ceil(w / s)`; an odd amount of padding puts the extra
    /// row/column on the bottom/right.
    Same,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    ho: usize,
    wo: usize,
    pad_top: usize,
    pad_left: usize,
    k: usize,
    s: usize,
    d: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.k * self.k * self.cin
    }

    /// Input coordinate for output position `o` and kernel tap `u`, if it
    /// falls inside the (unpadded) input.
    fn source(&self, o: usize, u: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * self.s + u * self.d).checked_sub(pad).filter(|&y| y < extent)
    }
}

fn same_padding(w: usize, k: usize, s: usize, d: usize) -> (usize, usize) {
    let out = w.div_ceil(s);
    let effective = k + (k - 1) * (d - 1);
    let total = ((out - 1) * s + effective).saturating_sub(w);
    (out, total / 2)
}

fn im2col(x: &[f64], batch: usize, g: &Geometry) -> Vec<f64> {
    let kk = g.patch_len();
    let mut cols = vec![0.0; batch * g.ho * g.wo * kk];
    for b in 0..batch {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = ((b * g.ho + i) * g.wo + j) * kk;
                for u in 0..g.k {
                    let Some(y) = g.source(i, u, g.pad_top, g.h) else { continue };
                    for v in 0..g.k {
                        let Some(xx) = g.source(j, v, g.pad_left, g.w) else { continue };
                        let src = ((b * g.h + y) * g.w + xx) * g.cin;
                        let dst = row + (u * g.k + v) * g.cin;
                        cols[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], batch: usize, g: &Geometry) -> Vec<f64> {
    let kk = g.patch_len();
    let mut x = vec![0.0; batch * g.h * g.w * g.cin];
    for b in 0..batch {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = ((b * g.ho + i) * g.wo + j) * kk;
                for u in 0..g.k {
                    let Some(y) = g.source(i, u, g.pad_top, g.h) else { continue };
                    for v in 0..g.k {
                        let Some(xx) = g.source(j, v, g.pad_left, g.w) else { continue };
                        let dst = ((b * g.h + y) * g.w + xx) * g.cin;
                        let src = row + (u * g.k + v) * g.cin;
                        for c in 0..g.cin {
                            x[dst + c] += cols[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Square-kernel 2-D convolution with kernels `[k, k, cin, cout]`.
#[derive(Clone, Debug)]
pub struct Conv2D {
    filters: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
    dilation: usize,
    activation: Activation,
    params: Vec<Param>,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    batch: usize,
    geometry: Geometry,
    cols: Tensor,
    z: Tensor,
}

impl Conv2D {
    pub fn new(
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        dilation: usize,
        activation: Activation,
    ) -> Result<Self> {
        if filters == 0 || kernel == 0 || stride == 0 || dilation == 0 {
            return Err(Error::invalid(
                "conv2d filters, kernel, stride and dilation must be positive",
            ));
        }
        Ok(Self {
            filters,
            kernel,
            stride,
            padding,
            dilation,
            activation,
            params: Vec::new(),
            cache: None,
        })
    }

    /// A built layer with explicit kernels `[k, k, cin, cout]` and bias.
    pub fn from_weights(
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
        dilation: usize,
        activation: Activation,
    ) -> Result<Self> {
        let s = kernels.shape();
        if s.len() != 4 || s[0] != s[1] || bias.shape() != [s[3]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d weights",
                left: s.to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let mut layer = Self::new(s[3], s[0], stride, padding, dilation, activation)?;
        layer.params = vec![Param::new("kernel", kernels), Param::new("bias", bias)];
        Ok(layer)
    }

    fn geometry(&self, h: usize, w: usize, cin: usize) -> Result<Geometry> {
        let (k, s, d) = (self.kernel, self.stride, self.dilation);
        let (ho, wo, pad_top, pad_left) = match self.padding {
            Padding::Valid => (
                conv_out_extent(h, k, s, 0, d)?,
                conv_out_extent(w, k, s, 0, d)?,
                0,
                0,
            ),
            Padding::Same => {
                if h == 0 || w == 0 {
                    return Err(Error::invalid("conv2d input has an empty spatial axis"));
                }
                let (ho, pt) = same_padding(h, k, s, d);
                let (wo, pl) = same_padding(w, k, s, d);
                (ho, wo, pt, pl)
            }
        };
        Ok(Geometry {
            h,
            w,
            cin,
            ho,
            wo,
            pad_top,
            pad_left,
            k,
            s,
            d,
        })
    }

    fn input_geometry(&self, x: &Tensor) -> Result<Geometry> {
        expect_rank(x, 4, "conv2d")?;
        let kshape = self.params[0].value.shape();
        let s = x.shape();
        if s[3] != kshape[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d forward",
                left: s.to_vec(),
                right: kshape.to_vec(),
            });
        }
        self.geometry(s[1], s[2], s[3])
    }

    fn kernel_matrix(&self, g: &Geometry) -> Result<Tensor> {
        self.params[0].value.reshape(&[g.patch_len(), self.filters])
    }

    fn pre_activation(&self, x: &Tensor) -> Result<(Geometry, Tensor, Tensor)> {
        let g = self.input_geometry(x)?;
        let batch = x.shape()[0];
        let cols = Tensor::new(
            [batch * g.ho * g.wo, g.patch_len()],
            im2col(x.data(), batch, &g),
        )?;
        let mut z = cols.matmul(&self.kernel_matrix(&g)?)?.add(&self.params[1].value)?;
        z.reshape_inplace(&[batch, g.ho, g.wo, self.filters])?;
        Ok((g, cols, z))
    }
}

impl Layer for Conv2D {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv2d {
            filters: self.filters,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            dilation: self.dilation,
            activation: self.activation,
        }
    }

    fn build(&mut self, input_shape: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let [h, w, cin] = input_shape[..] else {
            return Err(Error::invalid(format!(
                "conv2d expects [H, W, C] input, got {input_shape:?}"
            )));
        };
        let g = self.geometry(h, w, cin)?;
        let shape = [self.kernel, self.kernel, cin, self.filters];
        self.params = vec![
            Param::new("kernel", Init::Glorot.sample(rng, &shape)),
            Param::new("bias", Tensor::zeros(&[self.filters])),
        ];
        self.cache = None;
        Ok(vec![g.ho, g.wo, self.filters])
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (geometry, cols, z) = self.pre_activation(x)?;
        let out = self.activation.apply(&z);
        self.cache = Some(ConvCache {
            batch: x.shape()[0],
            geometry,
            cols,
            z,
        });
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activation.apply(&self.pre_activation(x)?.2))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("conv2d"))?;
        let delta = activation_backward(self.activation, &cache.z, upstream)?;
        self.backward_from_logits(&delta)
    }

    fn backward_from_logits(&mut self, delta: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("conv2d"))?;
        delta.expect_same_shape(&cache.z, "conv2d backward")?;
        let g = cache.geometry;
        let delta = delta.reshape(&[cache.batch * g.ho * g.wo, self.filters])?;
        let dk = cache.cols.matmul_tn(&delta)?;
        let dcols = delta.matmul_nt(&self.kernel_matrix(&g)?)?;
        let dx = Tensor::new(
            [cache.batch, g.h, g.w, g.cin],
            col2im(dcols.data(), cache.batch, &g),
        )?;
        self.params[0].grad = dk.reshape(self.params[0].value.shape())?;
        self.params[1].grad = delta.sum_rows();
        Ok(dx)
    }

    fn output_activation(&self) -> Option<Activation> {
        Some(self.activation)
    }

    fn params(&self) -> &[Param] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Valid-padded square pooling window.
#[derive(Clone, Debug)]
pub struct Pool2D {
    kind: PoolKind,
    pool: usize,
    stride: usize,
    cache: Option<PoolCache>,
}

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    /// For max pooling, the flat input index that won each output element.
    winners: Vec<usize>,
}

impl Pool2D {
    pub fn new(kind: PoolKind, pool: usize, stride: usize) -> Result<Self> {
        if pool == 0 || stride == 0 {
            return Err(Error::invalid("pool size and stride must be positive"));
        }
        Ok(Self {
            kind,
            pool,
            stride,
            cache: None,
        })
    }

    fn out_extents(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.pool > h || self.pool > w {
            return Err(Error::invalid(format!(
                "pool {} larger than input {h}x{w}",
                self.pool
            )));
        }
        Ok((
            (h - self.pool) / self.stride + 1,
            (w - self.pool) / self.stride + 1,
        ))
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        expect_rank(x, 4, "pool2d")?;
        let [b, h, w, c] = x.shape()[..] else { unreachable!() };
        let (ho, wo) = self.out_extents(h, w)?;
        let p = self.pool;
        let area = (p * p) as f64;
        let xd = x.data();
        let mut out = vec![0.0; b * ho * wo * c];
        let mut winners = Vec::new();
        if self.kind == PoolKind::Max {
            winners.resize(out.len(), 0);
        }
        for n in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for ch in 0..c {
                        let o = ((n * ho + i) * wo + j) * c + ch;
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = usize::MAX;
                        let mut sum = 0.0;
                        for u in 0..p {
                            for v in 0..p {
                                let at = ((n * h + i * self.stride + u) * w + j * self.stride + v)
                                    * c
                                    + ch;
                                // strict > keeps the first maximum in scan order
                                if xd[at] > best || best_at == usize::MAX {
                                    best = xd[at];
                                    best_at = at;
                                }
                                sum += xd[at];
                            }
                        }
                        match self.kind {
                            PoolKind::Max => {
                                out[o] = best;
                                winners[o] = best_at;
                            }
                            PoolKind::Avg => out[o] = sum / area,
                        }
                    }
                }
            }
        }
        Ok((Tensor::new([b, ho, wo, c], out)?, winners))
    }
}

impl Layer for Pool2D {
    fn kind(&self) -> &'static str {
        match self.kind {
            PoolKind::Max => "max_pool2d",
            PoolKind::Avg => "avg_pool2d",
        }
    }

    fn spec(&self) -> LayerSpec {
        LayerSpec::Pool2d {
            kind: self.kind,
            pool: self.pool,
            stride: self.stride,
        }
    }

    fn build(&mut self, input_shape: &[usize], _rng: &mut Rng) -> Result<Vec<usize>> {
        let [h, w, c] = input_shape[..] else {
            return Err(Error::invalid(format!(
                "pool2d expects [H, W, C] input, got {input_shape:?}"
            )));
        };
        let (ho, wo) = self.out_extents(h, w)?;
        Ok(vec![ho, wo, c])
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (out, winners) = self.run(x)?;
        self.cache = Some(PoolCache {
            input_shape: x.shape().to_vec(),
            winners,
        });
        Ok(out)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x)?.0)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or(Error::BackwardBeforeForward("pool2d"))?;
        let [b, h, w, c] = cache.input_shape[..] else { unreachable!() };
        let (ho, wo) = self.out_extents(h, w)?;
        if upstream.shape() != [b, ho, wo, c] {
            return Err(Error::ShapeMismatch {
                op: "pool2d backward",
                left: upstream.shape().to_vec(),
                right: vec![b, ho, wo, c],
            });
        }
        let mut dx = Tensor::zeros(&cache.input_shape);
        let dxd = dx.data_mut();
        let up = upstream.data();
        match self.kind {
            PoolKind::Max => {
                for (&at, &g) in cache.winners.iter().zip(up) {
                    dxd[at] += g;
                }
            }
            PoolKind::Avg => {
                let p = self.pool;
                let share = 1.0 / (p * p) as f64;
                for n in 0..b {
                    for i in 0..ho {
                        for j in 0..wo {
                            for ch in 0..c {
                                let g = up[((n * ho + i) * wo + j) * c + ch] * share;
                                for u in 0..p {
                                    for v in 0..p {
                                        let at = ((n * h + i * self.stride + u) * w
                                            + j * self.stride
                                            + v)
                                            * c
                                            + ch;
                                        dxd[at] += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}
