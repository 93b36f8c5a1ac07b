use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Permute(Var, Arc<[usize]>),
    Reshape(Var),
    SumTo(Var),
    BroadcastTo(Var),
    SumLast(Var),
    ExpandLast(Var),
    Relu(Var),
    Gelu(Var),
    GeluGrad(Var),
    Softmax(Var),
    PowScalar(Var, T),
    Gather {
        table: Var,
        ids: Arc<[usize]>,
        index_shape: Arc<[usize]>,
    },
    ScatterAdd {
        src: Var,
        ids: Arc<[usize]>,
        index_shape: Arc<[usize]>,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Pad {
        src: Var,
        axis: usize,
        start: usize,
    },
    Concat(Arc<[Var]>, usize),
    CrossEntropy {
        logits: Var,
        targets: Arc<[usize]>,
        weights: Arc<[T]>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _)
            | Permute(a, _)
            | Reshape(a)
            | SumTo(a)
            | BroadcastTo(a)
            | SumLast(a)
            | ExpandLast(a)
            | Relu(a)
            | Gelu(a)
            | GeluGrad(a)
            | Softmax(a)
            | PowScalar(a, _) => vec![*a],
            Gather { table, .. } => vec![*table],
            ScatterAdd { src, .. } | Slice { src, .. } | Pad { src, .. } => vec![*src],
            Concat(parts, _) => parts.to_vec(),
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Every node's parents precede it. A graph built with [`Graph::no_grad`]
/// evaluates values only and never records parents.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) recording: bool,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

pub(crate) fn gelu_grad2<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    let s = T::one() - t * t;
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    let d2u = c * T::lit(6.0) * a * x;
    s * du - x * t * s * du * du + half * x * s * d2u
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
            rng: None,
        }
    }

    /// A graph that only evaluates; nothing on it is differentiable.
    pub fn no_grad() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    /// Seeds the RNG used by [`Graph::dropout`]. Without it dropout is the identity.
    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn value_arc(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        self.push_arc(Arc::new(value), op, name)
    }

    fn push_arc(&mut self, value: Arc<Tensor<T>>, op: Op<T>, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = match op {
            Op::Leaf => self.recording,
            Op::Constant => false,
            _ => self.recording && op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable input. On a no-grad graph this degrades to a constant.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    pub fn leaf_arc(&mut self, value: Arc<Tensor<T>>) -> Result<Var> {
        self.push_arc(value, Op::Leaf, "leaf")
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    pub fn constant_arc(&mut self, value: Arc<Tensor<T>>) -> Result<Var> {
        self.push_arc(value, Op::Constant, "constant")
    }

    pub fn scalar(&mut self, value: T) -> Result<Var> {
        self.constant(Tensor::scalar(value))
    }

    /// Same value, cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value_arc(v);
        self.constant_arc(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_zip(self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_zip(self.value(b), "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).broadcast_zip(self.value(b), "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let s = self.scalar(c)?;
        self.add(a, s)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(axes)?;
        self.push(out, Op::Permute(a, axes.into()), "permute")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape(a))));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Sums leading dimensions so the result has `shape`, a suffix of the input shape.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let out = self.value(a).sum_to(shape)?;
        self.push(out, Op::SumTo(a), "sum_to")
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let out = self.value(a).broadcast_to(shape)?;
        self.push(out, Op::BroadcastTo(a), "broadcast_to")
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() == 0 {
            return Ok(a);
        }
        let out = self.value(a).sum_to(&[])?;
        self.push(out, Op::SumTo(a), "sum")
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_last()?;
        self.push(out, Op::SumLast(a), "sum_last")
    }

    pub fn expand_last(&mut self, a: Var, n: usize) -> Result<Var> {
        let out = self.value(a).expand_last(n)?;
        self.push(out, Op::ExpandLast(a), "expand_last")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a), "relu")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu(a), "gelu")
    }

    pub(crate) fn gelu_grad(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu_grad);
        self.push(out, Op::GeluGrad(a), "gelu_grad")
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_last()?;
        self.push(out, Op::Softmax(a), "softmax")
    }

    pub fn pow_scalar(&mut self, a: Var, p: T) -> Result<Var> {
        let out = self.value(a).map(|x| x.powf(p));
        self.push(out, Op::PowScalar(a, p), "pow")
    }

    /// Row lookup into a `[rows, dim]` table. Output shape is `index_shape ++ [dim]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], index_shape: &[usize]) -> Result<Var> {
        if ids.len() != index_shape.iter().product::<usize>() {
            return Err(Error::shape(
                "embedding",
                format!("{} ids for index shape {:?}", ids.len(), index_shape),
            ));
        }
        let out = self.value(table).gather_rows(ids, index_shape)?;
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.into(),
                index_shape: index_shape.into(),
            },
            "embedding",
        )
    }

    pub(crate) fn scatter_add(
        &mut self,
        src: Var,
        ids: Arc<[usize]>,
        index_shape: Arc<[usize]>,
        rows: usize,
    ) -> Result<Var> {
        let out = self.value(src).scatter_add_rows(&ids, rows)?;
        self.push(out, Op::ScatterAdd { src, ids, index_shape }, "scatter_add")
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).slice(axis, start, len)?;
        self.push(out, Op::Slice { src: a, axis, start }, "slice")
    }

    pub(crate) fn pad(&mut self, a: Var, axis: usize, start: usize, full: usize) -> Result<Var> {
        let out = self.value(a).pad_into(axis, start, full)?;
        self.push(out, Op::Pad { src: a, axis, start }, "pad")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&values, axis)?;
        self.push(out, Op::Concat(parts.into(), axis), "concat")
    }

    /// Weighted sum over rows of `-log softmax(logits)[target]`.
    ///
    /// `logits` is `[rows, classes]`; rows with weight 0 contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() || targets.len() != weights.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!(
                    "logits {:?}, {} targets, {} weights",
                    lv.shape(),
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let classes = lv.shape()[1];
        let logp = lv.log_softmax_last()?;
        let mut total = T::zero();
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            if t >= classes {
                return Err(Error::TokenOutOfRange { id: t, vocab: classes });
            }
            total = total - w * logp.data()[i * classes + t];
        }
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.into(),
                weights: weights.into(),
            },
            "cross_entropy",
        )
    }

    /// Normalizes the last dimension to zero mean and unit variance (biased estimator).
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let n = self.value(x).last_dim();
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let s = self.sum_last(x)?;
        let mean = self.scale(s, inv_n)?;
        let mean = self.expand_last(mean, n)?;
        let centered = self.sub(x, mean)?;
        let sq = self.mul(centered, centered)?;
        let var = self.sum_last(sq)?;
        let var = self.scale(var, inv_n)?;
        let var = self.add_scalar(var, eps)?;
        let inv_std = self.pow_scalar(var, T::lit(-0.5))?;
        let inv_std = self.expand_last(inv_std, n)?;
        self.mul(centered, inv_std)
    }

    /// Layer norm followed by the elementwise affine `gamma * y + beta`.
    pub fn layer_norm_affine(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let y = self.layer_norm(x, eps)?;
        let y = self.mul(y, gamma)?;
        self.add(y, beta)
    }

    /// Inverted dropout. Identity when `rate` is 0 or the graph has no dropout RNG.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let shape = self.shape(x).to_vec();
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?)?;
        self.mul(x, mask)
    }

    /// `x @ w + b` for `x: [.., in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }
}
