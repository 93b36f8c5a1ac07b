use std::collections::HashMap;
use std::sync::Arc;

use super::graph::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    map: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `leaf`, or `None` when the loss does not depend on it.
    pub fn get(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.map.get(&leaf)
    }

    /// Gradient for `leaf`, zero-filled when the loss does not reach it.
    pub fn get_or_zeros(&self, leaf: Var, shape: &[usize]) -> Tensor<T> {
        self.map.get(&leaf).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<T: Scalar> Graph<T> {
    /// Reverse pass from a scalar `loss`, returning gradients for every leaf on its path.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let grads = self.backprop(loss, false)?;
        let mut map = HashMap::new();
        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(g), Op::Leaf) = (g, &self.nodes[i].op) {
                map.insert(Var(i), (*self.nodes[g.0].value).clone());
            }
        }
        Ok(Gradients { map })
    }

    /// Gradient nodes of `loss` with respect to `wrt`.
    ///
    /// With `create_graph` the backward computation is itself recorded, so the
    /// returned nodes can be differentiated again (second-order derivatives).
    pub fn grad(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let grads = self.backprop(loss, create_graph)?;
        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let zeros = Tensor::zeros(self.shape(w));
                    self.constant(zeros)
                }
            })
            .collect()
    }

    fn backprop(&mut self, loss: Var, create_graph: bool) -> Result<Vec<Option<Var>>> {
        if self.value(loss).rank() != 0 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Detached);
        }
        let saved = self.recording;
        self.recording = create_graph;
        let result = self.backprop_inner(loss);
        self.recording = saved;
        result
    }

    fn backprop_inner(&mut self, loss: Var) -> Result<Vec<Option<Var>>> {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[loss.0] = Some(self.constant(Tensor::scalar(T::one()))?);
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (parent, contrib) in self.vjp(Var(i), &op, g)? {
                grads[parent.0] = Some(match grads[parent.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian products for one node, skipping parents that need no gradient.
    fn vjp(&mut self, out: Var, op: &Op<T>, g: Var) -> Result<Vec<(Var, Var)>> {
        let rg = |graph: &Self, v: Var| graph.nodes[v.0].requires_grad;
        let mut res = Vec::with_capacity(2);
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if rg(self, *a) {
                    res.push((*a, g));
                }
                if rg(self, *b) {
                    let shape = self.shape(*b).to_vec();
                    res.push((*b, self.sum_to(g, &shape)?));
                }
            }
            Op::Sub(a, b) => {
                if rg(self, *a) {
                    res.push((*a, g));
                }
                if rg(self, *b) {
                    let shape = self.shape(*b).to_vec();
                    let s = self.sum_to(g, &shape)?;
                    res.push((*b, self.scale(s, -T::one())?));
                }
            }
            Op::Mul(a, b) => {
                if rg(self, *a) {
                    res.push((*a, self.mul(g, *b)?));
                }
                if rg(self, *b) {
                    let shape = self.shape(*b).to_vec();
                    let ga = self.mul(g, *a)?;
                    res.push((*b, self.sum_to(ga, &shape)?));
                }
            }
            Op::Scale(a, c) => res.push((*a, self.scale(g, *c)?)),
            Op::MatMul(a, b) => {
                if rg(self, *a) {
                    let bt = self.transpose(*b)?;
                    res.push((*a, self.matmul(g, bt)?));
                }
                if rg(self, *b) {
                    let shape = self.shape(*b).to_vec();
                    let gb = if self.value(*a).rank() > 2 && shape.len() == 2 {
                        let at = self.transpose(*a)?;
                        let full = self.matmul(at, g)?;
                        self.sum_to(full, &shape)?
                    } else {
                        let at = self.transpose(*a)?;
                        self.matmul(at, g)?
                    };
                    res.push((*b, gb));
                }
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                res.push((*a, self.permute(g, &inverse)?));
            }
            Op::Reshape(a) => {
                let shape = self.shape(*a).to_vec();
                res.push((*a, self.reshape(g, &shape)?));
            }
            Op::SumTo(a) => {
                let shape = self.shape(*a).to_vec();
                res.push((*a, self.broadcast_to(g, &shape)?));
            }
            Op::BroadcastTo(a) => {
                let shape = self.shape(*a).to_vec();
                res.push((*a, self.sum_to(g, &shape)?));
            }
            Op::SumLast(a) => {
                let n = self.value(*a).last_dim();
                res.push((*a, self.expand_last(g, n)?));
            }
            Op::ExpandLast(a) => res.push((*a, self.sum_last(g)?)),
            Op::Relu(a) => {
                let step = self.value(*a).map(|x| if x > T::zero() { T::one() } else { T::zero() });
                let step = self.constant(step)?;
                res.push((*a, self.mul(g, step)?));
            }
            Op::Gelu(a) => {
                let d = self.gelu_grad(*a)?;
                res.push((*a, self.mul(g, d)?));
            }
            Op::GeluGrad(a) => {
                let d2 = self.value(*a).map(super::graph::gelu_grad2);
                let d2 = self.constant(d2)?;
                res.push((*a, self.mul(g, d2)?));
            }
            Op::Softmax(a) => {
                let n = self.value(out).last_dim();
                let gy = self.mul(g, out)?;
                let s = self.sum_last(gy)?;
                let s = self.expand_last(s, n)?;
                let ys = self.mul(out, s)?;
                res.push((*a, self.sub(gy, ys)?));
            }
            Op::PowScalar(a, p) => {
                let pm1 = self.pow_scalar(*a, *p - T::one())?;
                let d = self.scale(pm1, *p)?;
                res.push((*a, self.mul(g, d)?));
            }
            Op::Gather {
                table,
                ids,
                index_shape,
            } => {
                let rows = self.shape(*table)[0];
                let gt = self.scatter_add(g, Arc::clone(ids), Arc::clone(index_shape), rows)?;
                res.push((*table, gt));
            }
            Op::ScatterAdd { src, ids, index_shape } => {
                let gs = self.embedding(g, ids, index_shape)?;
                res.push((*src, gs));
            }
            Op::Slice { src, axis, start } => {
                let full = self.shape(*src)[*axis];
                res.push((*src, self.pad(g, *axis, *start, full)?));
            }
            Op::Pad { src, axis, start } => {
                let len = self.shape(*src)[*axis];
                res.push((*src, self.slice(g, *axis, *start, len)?));
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts.iter() {
                    let len = self.shape(p)[*axis];
                    if rg(self, p) {
                        res.push((p, self.slice(g, *axis, offset, len)?));
                    }
                    offset += len;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
            } => {
                let shape = self.shape(*logits).to_vec();
                let classes = shape[1];
                let mut w_full = Vec::with_capacity(shape[0] * classes);
                let mut onehot = vec![T::zero(); shape[0] * classes];
                for (i, (&t, &w)) in targets.iter().zip(weights.iter()).enumerate() {
                    w_full.extend(std::iter::repeat(w).take(classes));
                    if w != T::zero() {
                        onehot[i * classes + t] = w;
                    }
                }
                let w_full = self.constant(Tensor::new(shape.clone(), w_full)?)?;
                let onehot = self.constant(Tensor::new(shape, onehot)?)?;
                let p = self.softmax(*logits)?;
                let pw = self.mul(p, w_full)?;
                let diff = self.sub(pw, onehot)?;
                res.push((*logits, self.mul(diff, g)?));
            }
        }
        Ok(res)
    }
}
