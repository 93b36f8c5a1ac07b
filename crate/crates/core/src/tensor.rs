//! Dense row-major tensors and the raw kernels the autodiff graph is built on.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// True when `suffix` matches the trailing dimensions of `shape`.
pub(crate) fn is_suffix(suffix: &[usize], shape: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} holds {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
        let data = (0..numel(shape)).map(|_| T::lit(normal.sample(rng))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape)).map(|_| T::lit(rng.gen_range(lo..hi))).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("zip", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Elementwise binary op where `other` may broadcast over leading dims.
    pub(crate) fn broadcast_zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if !is_suffix(&other.shape, &self.shape) {
            return Err(Error::shape(
                op,
                format!("{:?} does not broadcast onto {:?}", other.shape, self.shape),
            ));
        }
        let inner = other.len();
        let data = if inner == self.len() {
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()
        } else {
            let mut out = Vec::with_capacity(self.len());
            for chunk in self.data.chunks(inner.max(1)) {
                out.extend(chunk.iter().zip(&other.data).map(|(&a, &b)| f(a, b)));
            }
            out
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Sums leading dimensions away so the result has `shape` (a suffix of ours).
    pub(crate) fn sum_to(&self, shape: &[usize]) -> Result<Self> {
        if !is_suffix(shape, &self.shape) {
            return Err(Error::shape(
                "sum_to",
                format!("{:?} is not a suffix of {:?}", shape, self.shape),
            ));
        }
        let inner = numel(shape);
        let mut out = vec![T::zero(); inner];
        for chunk in self.data.chunks(inner.max(1)) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o = *o + x;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
        })
    }

    pub(crate) fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        if !is_suffix(&self.shape, shape) {
            return Err(Error::shape(
                "broadcast_to",
                format!("{:?} does not broadcast onto {:?}", self.shape, shape),
            ));
        }
        let reps = numel(shape) / self.len().max(1);
        let mut data = Vec::with_capacity(numel(shape));
        for _ in 0..reps {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sum over the last dimension, keeping it with size 1.
    pub(crate) fn sum_last(&self) -> Result<Self> {
        if self.rank() == 0 {
            return Err(Error::shape("sum_last", "scalar input"));
        }
        let n = self.last_dim();
        let data = if n == 0 {
            vec![T::zero(); self.len()]
        } else {
            self.data.chunks(n).map(|c| c.iter().copied().sum()).collect()
        };
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = 1;
        Ok(Tensor { shape, data })
    }

    pub(crate) fn expand_last(&self, n: usize) -> Result<Self> {
        if self.last_dim() != 1 || self.rank() == 0 {
            return Err(Error::shape(
                "expand_last",
                format!("expected trailing dim 1, got {:?}", self.shape),
            ));
        }
        let mut data = Vec::with_capacity(self.len() * n);
        for &x in &self.data {
            data.extend(std::iter::repeat(x).take(n));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor { shape, data })
    }

    pub(crate) fn softmax_last(&self) -> Result<Self> {
        if self.rank() == 0 {
            return Err(Error::shape("softmax", "scalar input"));
        }
        let n = self.last_dim();
        let mut data = self.data.clone();
        for row in data.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z = z + *x;
            }
            for x in row.iter_mut() {
                *x = *x / z;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Log-softmax over the last dimension, computed without a graph.
    pub fn log_softmax_last(&self) -> Result<Self> {
        if self.rank() == 0 {
            return Err(Error::shape("log_softmax", "scalar input"));
        }
        let n = self.last_dim();
        let mut data = self.data.clone();
        for row in data.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            for x in row.iter_mut() {
                *x = *x - lse;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Batched matrix product. `other` is either 2-D or shares our batch dims.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (ra, rb) = (self.rank(), other.rank());
        if ra < 2 || rb < 2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", self.shape, other.shape)));
        }
        let (m, k) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (k2, n) = (other.shape[rb - 2], other.shape[rb - 1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let batch_a = &self.shape[..ra - 2];
        let mut shape = batch_a.to_vec();
        shape.push(m);
        shape.push(n);
        let mut out = vec![T::zero(); numel(&shape)];
        if rb == 2 {
            let rows = numel(batch_a) * m;
            gemm(&self.data, &other.data, &mut out, rows, k, n);
        } else {
            if other.shape[..rb - 2] != *batch_a {
                return Err(Error::shape(
                    "matmul",
                    format!("batch dims {:?} x {:?}", self.shape, other.shape),
                ));
            }
            let batches = numel(batch_a);
            for b in 0..batches {
                gemm(
                    &self.data[b * m * k..(b + 1) * m * k],
                    &other.data[b * k * n..(b + 1) * k * n],
                    &mut out[b * m * n..(b + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(Tensor { shape, data: out })
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(
                "permute",
                format!("axes {:?} for shape {:?}", axes, self.shape),
            ));
        }
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let mut strides = vec![1usize; r];
        for i in (0..r.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; r];
        let mut off = 0usize;
        for _ in 0..self.len() {
            data.push(self.data[off]);
            for d in (0..r).rev() {
                idx[d] += 1;
                off += src_strides[d];
                if idx[d] < shape[d] {
                    break;
                }
                off -= src_strides[d] * shape[d];
                idx[d] = 0;
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape)));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    /// (outer, axis, inner) extents around `axis`.
    fn split_axis(&self, axis: usize) -> (usize, usize, usize) {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        (outer, self.shape[axis], inner)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("axis {} [{}..{}) of {:?}", axis, start, start + len, self.shape),
            ));
        }
        let (outer, full, inner) = self.split_axis(axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner;
            data.extend_from_slice(&self.data[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Ok(Tensor { shape, data })
    }

    /// Embeds `self` into zeros of length `full` along `axis` at `start`.
    pub(crate) fn pad_into(&self, axis: usize, start: usize, full: usize) -> Result<Self> {
        if axis >= self.rank() || start + self.shape[axis] > full {
            return Err(Error::shape("pad", format!("{:?}", self.shape)));
        }
        let (outer, len, inner) = self.split_axis(axis);
        let mut shape = self.shape.clone();
        shape[axis] = full;
        let mut data = vec![T::zero(); numel(&shape)];
        for o in 0..outer {
            let dst = o * full * inner + start * inner;
            let src = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data[src..src + len * inner]);
        }
        Ok(Tensor { shape, data })
    }

    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::shape("concat", format!("axis {} of {:?}", axis, first.shape)));
        }
        let mut total = 0;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along {}", p.shape, first.shape, axis),
                ));
            }
            total += p.shape[axis];
        }
        let (outer, _, inner) = first.split_axis(axis);
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Row gather from a `[rows, dim]` table; output shape is `index_shape ++ [dim]`.
    pub(crate) fn gather_rows(&self, ids: &[usize], index_shape: &[usize]) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape("embedding", format!("table {:?}", self.shape)));
        }
        let (rows, dim) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::TokenOutOfRange { id, vocab: rows });
            }
            data.extend_from_slice(&self.data[id * dim..(id + 1) * dim]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(dim);
        Ok(Tensor { shape, data })
    }

    pub(crate) fn scatter_add_rows(&self, ids: &[usize], rows: usize) -> Result<Self> {
        let dim = self.last_dim();
        if self.len() != ids.len() * dim {
            return Err(Error::shape("scatter_add", format!("{:?}", self.shape)));
        }
        let mut data = vec![T::zero(); rows * dim];
        for (i, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::TokenOutOfRange { id, vocab: rows });
            }
            for j in 0..dim {
                data[id * dim + j] = data[id * dim + j] + self.data[i * dim + j];
            }
        }
        Ok(Tensor {
            shape: vec![rows, dim],
            data,
        })
    }
}

/// `out[rows, n] = a[rows, k] * b[k, n]`, ikj order.
fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], rows: usize, k: usize, n: usize) {
    for i in 0..rows {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::<f64>::from_f64(vec![3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    }

    #[test]
    fn batched_matmul_matches_per_batch() {
        let a = Tensor::<f64>::from_f64(vec![2, 1, 2], &[1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::from_f64(vec![2, 2, 1], &[1., 1., 2., 0.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3., 6.]);
    }

    #[test]
    fn permute_roundtrip() {
        let a = Tensor::<f64>::from_f64(vec![2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>()).unwrap();
        let p = a.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.data()[1], 4.0);
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), a);
    }

    #[test]
    fn slice_concat_pad() {
        let a = Tensor::<f64>::from_f64(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let l = a.slice(1, 0, 1).unwrap();
        let r = a.slice(1, 1, 2).unwrap();
        assert_eq!(r.data(), &[2., 3., 5., 6.]);
        assert_eq!(Tensor::concat(&[&l, &r], 1).unwrap(), a);
        let p = r.pad_into(1, 1, 3).unwrap();
        assert_eq!(p.data(), &[0., 2., 3., 0., 5., 6.]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        let a = Tensor::<f64>::zeros(&[2, 3]);
        assert!(a.matmul(&a).is_err());
    }
}
