use std::collections::BTreeMap;

use crate::autodiff::{Graph, Var};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{Batch, Forward, Seq2Seq};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything with named trainable tensors and a differentiable loss over examples.
pub trait Learner<T: Scalar>: Sync {
    type Example: Sync;

    /// Summed loss of `data` with the trainable tensors bound to `vars`.
    fn loss(&self, g: &mut Graph<T>, vars: &BTreeMap<String, Var>, data: &[Self::Example]) -> Result<Var>;

    /// Number of loss terms in `data`, used to report per-token averages.
    fn count(&self, data: &[Self::Example]) -> usize;
}

impl<T: Scalar> Learner<T> for Seq2Seq<T> {
    type Example = Example;

    fn loss(&self, g: &mut Graph<T>, vars: &BTreeMap<String, Var>, data: &[Example]) -> Result<Var> {
        let batch = Batch::from_examples(data, self.config.max_src_len, self.config.max_tgt_len)?;
        let b = self.bind(g, vars)?;
        Ok(self.nll(g, &b, &batch, Forward::default())?.loss)
    }

    fn count(&self, data: &[Example]) -> usize {
        let cap = self.config.max_tgt_len;
        data.iter().map(|e| (e.summary.len() + 1).min(cap)).sum()
    }
}

/// One observation `(x, y)` of a scalar linear model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// `y ≈ w x + b` under summed squared error; trainable tensors `w` and `b`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearRegression;

impl LinearRegression {
    pub fn params<T: Scalar>(w: f64, b: f64) -> BTreeMap<String, Tensor<T>> {
        [
            ("b".to_string(), Tensor::scalar(T::lit(b))),
            ("w".to_string(), Tensor::scalar(T::lit(w))),
        ]
        .into_iter()
        .collect()
    }
}

impl<T: Scalar> Learner<T> for LinearRegression {
    type Example = Point;

    fn loss(&self, g: &mut Graph<T>, vars: &BTreeMap<String, Var>, data: &[Point]) -> Result<Var> {
        if data.is_empty() {
            return Err(Error::Invalid("empty regression data".into()));
        }
        let get = |n: &str| {
            vars.get(n)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("parameter {n} not bound")))
        };
        let (w, b) = (get("w")?, get("b")?);
        let n = data.len();
        let xs = g.constant(Tensor::from_f64(
            vec![n],
            &data.iter().map(|p| p.x).collect::<Vec<_>>(),
        )?)?;
        let ys = g.constant(Tensor::from_f64(
            vec![n],
            &data.iter().map(|p| p.y).collect::<Vec<_>>(),
        )?)?;
        let wx = g.broadcast_to(w, &[n])?;
        let wx = g.mul(wx, xs)?;
        let bb = g.broadcast_to(b, &[n])?;
        let pred = g.add(wx, bb)?;
        let r = g.sub(pred, ys)?;
        let sq = g.mul(r, r)?;
        g.sum(sq)
    }

    fn count(&self, data: &[Point]) -> usize {
        data.len()
    }
}

/// One scalar quadratic `(p - target)^2` over a tensor named `p`.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub target: f64,
}

impl<T: Scalar> Learner<T> for Quadratic {
    type Example = ();

    fn loss(&self, g: &mut Graph<T>, vars: &BTreeMap<String, Var>, _data: &[()]) -> Result<Var> {
        let p = *vars
            .get("p")
            .ok_or_else(|| Error::Invalid("parameter p not bound".into()))?;
        let d = g.add_scalar(p, T::lit(-self.target))?;
        let sq = g.mul(d, d)?;
        g.sum(sq)
    }

    fn count(&self, _data: &[()]) -> usize {
        1
    }
}
