//! Dense row-major `f64` tensors and the seeded random generator.
//!
//! A [`Tensor`] is a flat `Vec<f64>` plus a shape. There are no views or
//! strides: every operation that changes layout copies. Broadcasting is
//! limited to three cases: equal shapes, a rank-1 right operand matching the
//! last extent of the left operand (row broadcast, used for bias addition),
//! and a scalar right operand.

use std::fmt;

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    /// Index of the maximum; ties resolve to the lowest index.
    Argmax,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extent of the leading axis (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of elements per leading-axis row.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Extent of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let at = self.offset(index)?;
        self.data[at] = value;
        Ok(())
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::OutOfBounds(format!(
                "index {index:?} has wrong rank for shape {:?}",
                self.shape
            )));
        }
        let mut at = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return Err(Error::OutOfBounds(format!(
                    "index {index:?} outside shape {:?}",
                    self.shape
                )));
            }
            at = at * n + i;
        }
        Ok(at)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    /// Elementwise combination of two tensors of identical shape.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Elementwise arithmetic with restricted broadcasting of `b`.
    pub fn ewise(&self, b: &Tensor, op: EwiseOp) -> Result<Tensor> {
        let f = match op {
            EwiseOp::Add => |x: f64, y: f64| x + y,
            EwiseOp::Sub => |x: f64, y: f64| x - y,
            EwiseOp::Mul => |x: f64, y: f64| x * y,
            EwiseOp::Div => |x: f64, y: f64| x / y,
        };
        if self.shape == b.shape {
            return self.zip_map(b, f);
        }
        if b.shape.is_empty() {
            let s = b.data[0];
            return Ok(self.map(|x| f(x, s)));
        }
        if b.rank() == 1 && self.rank() >= 1 && self.last_dim() == b.len() {
            let w = b.len();
            let data = self
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % w]))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        Err(Error::ShapeMismatch {
            op: "ewise broadcast",
            left: self.shape.clone(),
            right: b.shape.clone(),
        })
    }

    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        self.ewise(b, EwiseOp::Add)
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        self.ewise(b, EwiseOp::Sub)
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        self.ewise(b, EwiseOp::Mul)
    }

    pub fn div(&self, b: &Tensor) -> Result<Tensor> {
        self.ewise(b, EwiseOp::Div)
    }

    /// `self += other` for identical shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Reduction over all elements (`axis = None`) or along one axis.
    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Tensor> {
        let Some(axis) = axis else {
            let v = match op {
                ReduceOp::Sum => self.sum(),
                ReduceOp::Mean => self.mean(),
                ReduceOp::Max => self.max(),
                ReduceOp::Argmax => argmax(&self.data) as f64,
            };
            return Ok(Tensor::scalar(v));
        };
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut out = vec![0.0; outer * inner];
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (k, slot) in lane.iter_mut().enumerate() {
                    *slot = self.data[(o * n + k) * inner + i];
                }
                out[o * inner + i] = match op {
                    ReduceOp::Sum => lane.iter().sum(),
                    ReduceOp::Mean => lane.iter().sum::<f64>() / n as f64,
                    ReduceOp::Max => lane.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ReduceOp::Argmax => argmax(&lane) as f64,
                };
            }
        }
        Tensor::new(out_shape, out)
    }

    /// Sums over every axis except the last: `[.., n] -> [n]`.
    pub fn sum_rows(&self) -> Tensor {
        let w = self.last_dim();
        let mut out = vec![0.0; w];
        for chunk in self.data.chunks(w) {
            out.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
        }
        Tensor::from_vec(out)
    }

    /// Argmax along the last axis for every leading position.
    pub fn argmax_last(&self) -> Vec<usize> {
        self.data.chunks(self.last_dim()).map(argmax).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut t = self.clone();
        t.reshape_inplace(shape)?;
        Ok(t)
    }

    pub fn reshape_inplace(&mut self, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(())
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose2d")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], data)
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() == 0 || start > end || end > self.rows() {
            return Err(Error::OutOfBounds(format!(
                "rows {start}..{end} of shape {:?}",
                self.shape
            )));
        }
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::new(shape, self.data[start * w..end * w].to_vec())
    }

    /// Gathers leading-axis rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let w = self.row_len();
        let rows = self.rows();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= rows {
                return Err(Error::OutOfBounds(format!("row {i} of {rows}")));
            }
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Stacks tensors along the leading axis; trailing extents must agree.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != first.rank() || &p.shape[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Tensor::new(shape, data)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0],
            }),
        }
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        self.gemm(b, false, false)
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn matmul_tn(&self, b: &Tensor) -> Result<Tensor> {
        self.gemm(b, true, false)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, b: &Tensor) -> Result<Tensor> {
        self.gemm(b, false, true)
    }

    fn gemm(&self, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let (ar, ac) = self.dims2("matmul")?;
        let (br, bc) = b.dims2("matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: b.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            // Row-major strides; a transpose just swaps them.
            let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
            let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
            // SAFETY: the pointers cover m*k, k*n and m*n elements with the
            // strides computed above, and `out` does not alias the inputs.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    self.data.as_ptr(),
                    rsa,
                    csa,
                    b.data.as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn rand_normal(rng: &mut Rng, shape: &[usize], mean: f64, std: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| mean + std * rng.normal()).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn rand_uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Lowest index of the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Seeded pseudo-random generator.
///
/// The stream is xoshiro256** seeded through SplitMix64 (`seed_from_u64`).
/// Uniform reals take the top 53 bits of a draw; normals use the Box–Muller
/// transform, consuming two uniforms per pair and caching the second value.
/// Both algorithms are fixed, so a seed yields the same values on every
/// platform and every run.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    /// Independent child generator, for handing a stream to another owner.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new([2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(i.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_dense_layer_shape() {
        let a = Tensor::ones(&[1, 2048]);
        let b = Tensor::zeros(&[2048, 512]);
        assert_eq!(a.matmul(&b).unwrap().shape(), &[1, 512]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(7);
        let a = Tensor::rand_normal(&mut rng, &[3, 4], 0.0, 1.0);
        let b = Tensor::rand_normal(&mut rng, &[4, 2], 0.0, 1.0);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = Rng::new(3);
        let a = Tensor::rand_normal(&mut rng, &[5, 3], 0.0, 1.0);
        let b = Tensor::rand_normal(&mut rng, &[5, 4], 0.0, 1.0);
        let c = Tensor::rand_normal(&mut rng, &[4, 3], 0.0, 1.0);
        let tn = a.matmul_tn(&b).unwrap();
        let tn_ref = naive_matmul(&a.transpose2d().unwrap(), &b);
        let nt = a.matmul_nt(&c).unwrap();
        let nt_ref = naive_matmul(&a, &c.transpose2d().unwrap());
        for (x, y) in tn.data().iter().zip(tn_ref.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in nt.data().iter().zip(nt_ref.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn ewise_cases() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.add(&Tensor::zeros(&[3])).unwrap(), a);

        let m = Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let row = Tensor::from_vec(vec![10.0, 20.0]);
        let got = m.add(&row).unwrap();
        let mut want = m.clone();
        for i in 0..2 {
            for j in 0..2 {
                want.data_mut()[i * 2 + j] += row.data()[j];
            }
        }
        assert_eq!(got, want);

        let h = Tensor::from_vec(vec![1.0, 2.0]).div(&Tensor::scalar(2.0)).unwrap();
        assert_eq!(h.data(), &[0.5, 1.0]);

        assert!(m.add(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn reductions() {
        let a = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(a.reduce(ReduceOp::Sum, None).unwrap().data(), &[6.0]);
        let p = Tensor::from_vec(vec![0.26, 0.14, 0.41, 0.19]);
        assert_eq!(p.reduce(ReduceOp::Argmax, None).unwrap().data(), &[2.0]);
        let m = Tensor::new([2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        let mean0 = m.reduce(ReduceOp::Mean, Some(0)).unwrap();
        assert_eq!(mean0.shape(), &[2]);
        assert_eq!(mean0.data(), &[2.0, 4.0]);
        assert!(matches!(
            m.reduce(ReduceOp::Sum, Some(2)),
            Err(Error::AxisOutOfRange { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        let t = Tensor::new([1, 3], vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.reduce(ReduceOp::Argmax, Some(1)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn layout_ops() {
        let t = Tensor::zeros(&[8, 8, 32]);
        assert_eq!(t.reshape(&[2048]).unwrap().shape(), &[2048]);
        assert!(t.reshape(&[2047]).is_err());

        let mut rng = Rng::new(1);
        let m = Tensor::rand_normal(&mut rng, &[3, 5], 0.0, 1.0);
        assert_eq!(m.transpose2d().unwrap().transpose2d().unwrap(), m);

        let a = Tensor::rand_normal(&mut rng, &[2, 3], 0.0, 1.0);
        let b = Tensor::rand_normal(&mut rng, &[1, 3], 0.0, 1.0);
        let c = Tensor::concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 3]);
        for i in 0..3 {
            let src = if i < 2 { a.row(i) } else { b.row(0) };
            assert_eq!(c.row(i), src);
        }
        assert!(c.slice_rows(2, 4).is_err());
        assert_eq!(c.slice_rows(1, 3).unwrap().row(1), b.row(0));
    }

    #[test]
    fn rand_normal_degenerate_and_deterministic() {
        let mut rng = Rng::new(5);
        let t = Tensor::rand_normal(&mut rng, &[10], 3.5, 0.0);
        assert!(t.data().iter().all(|&v| v == 3.5));
        let a = Tensor::rand_normal(&mut Rng::new(42), &[64], 0.0, 1.0);
        let b = Tensor::rand_normal(&mut Rng::new(42), &[64], 0.0, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn rand_normal_moments() {
        let t = Tensor::rand_normal(&mut Rng::new(11), &[100_000], 0.0, 1.0);
        let mean = t.mean();
        let std = (t.map(|v| (v - mean).powi(2)).sum() / t.len() as f64).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn rand_uniform_bounds() {
        let t = Tensor::rand_uniform(&mut Rng::new(2), &[10_000], -2.0, 3.0);
        assert!(t.min() >= -2.0 && t.max() < 3.0);
        let eq = Tensor::rand_uniform(&mut Rng::new(2), &[4], 1.0, 1.0);
        assert!(eq.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn below_and_permutation() {
        let mut rng = Rng::new(9);
        assert!((0..1000).all(|_| rng.below(7) < 7));
        let mut p = rng.permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
