//! Central finite-difference verification of reverse-mode gradients.

use rayon::prelude::*;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
}

/// Options for [`grad_check_many`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so exact zeros compare in absolute terms.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-6,
            tol: 1e-5,
            floor: 1e-3,
        }
    }
}

/// Checks `f` at `x` against central differences `(f(x+eps) - f(x-eps)) / 2eps`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var> + Sync,
{
    let opts = GradCheck {
        eps,
        tol,
        ..GradCheck::default()
    };
    grad_check_many(|g, xs| f(g, xs[0]), std::slice::from_ref(x), opts)
}

/// Gradient check over several input tensors at once.
pub fn grad_check_many<T, F>(f: F, xs: &[Tensor<T>], opts: GradCheck) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var> + Sync,
{
    if opts.eps <= 0.0 {
        return Err(Error::Invalid("grad_check eps must be positive".into()));
    }
    let mut graph = Graph::new();
    let leaves = xs.iter().map(|x| graph.leaf(x.clone())).collect::<Result<Vec<_>>>()?;
    let loss = f(&mut graph, &leaves)?;
    let analytic: Vec<Tensor<T>> = match graph.backward(loss) {
        Ok(grads) => leaves
            .iter()
            .zip(xs)
            .map(|(&l, x)| grads.get_or_zeros(l, x.shape()))
            .collect(),
        // A loss that ignores every input has zero gradient everywhere.
        Err(Error::Detached) => xs.iter().map(|x| Tensor::zeros(x.shape())).collect(),
        Err(e) => return Err(e),
    };

    let eval = |probe: &[Tensor<T>]| -> Result<f64> {
        // Probes record too, so `f` may take gradients internally.
        let mut g = Graph::new();
        let vars = probe.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        let v = g.value(out).item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "grad_check probe" });
        }
        Ok(v)
    };

    let coords: Vec<(usize, usize)> = xs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect();
    let errors = coords
        .par_iter()
        .map(|&(t, i)| {
            let mut probe = xs.to_vec();
            let base = probe[t].data()[i];
            probe[t].data_mut()[i] = base + T::lit(opts.eps);
            let up = eval(&probe)?;
            probe[t].data_mut()[i] = base - T::lit(opts.eps);
            let down = eval(&probe)?;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[t].data()[i].as_f64();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            Ok((abs, rel))
        })
        .collect::<Result<Vec<_>>>()?;

    let max_abs_error = errors.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_rel_error = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_abs_error,
        max_rel_error,
        checked: errors.len(),
        pass: max_rel_error < opts.tol,
    })
}
