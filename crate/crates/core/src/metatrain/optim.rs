use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TensorMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: TensorMap<T>,
    pub v: TensorMap<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: TensorMap::new(),
            v: TensorMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut TensorMap<T>, grads: &TensorMap<T>) -> Result<()> {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{name}: {:?} vs {:?}", p.shape(), g.shape()),
                ));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *x = *x - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Clears both moment estimates, keeping the step count.
    pub fn zero_moments(&mut self) {
        for t in self.m.values_mut().chain(self.v.values_mut()) {
            t.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam or plain gradient descent.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    Sgd { lr: f64, t: u64 },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(AdamConfig::with_lr(lr))),
            OptimizerKind::Sgd => Optimizer::Sgd { lr, t: 0 },
        }
    }

    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Adam(a) => a.t,
            Optimizer::Sgd { t, .. } => *t,
        }
    }

    pub fn step(&mut self, params: &mut TensorMap<T>, grads: &TensorMap<T>) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd { lr, t } => {
                *t += 1;
                let lr = T::lit(*lr);
                for (name, g) in grads {
                    let p = params
                        .get_mut(name)
                        .ok_or_else(|| Error::Invalid(format!("gradient for unknown parameter {name}")))?;
                    if p.shape() != g.shape() {
                        return Err(Error::shape(
                            "sgd",
                            format!("{name}: {:?} vs {:?}", p.shape(), g.shape()),
                        ));
                    }
                    for (x, &gi) in p.data_mut().iter_mut().zip(g.data()) {
                        *x = *x - lr * gi;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn zero_moments(&mut self) {
        if let Optimizer::Adam(a) = self {
            a.zero_moments();
        }
    }

    /// Moment tensors under `prefix`, for checkpointing.
    pub fn export(&self, prefix: &str, out: &mut TensorMap<T>) {
        if let Optimizer::Adam(a) = self {
            for (n, t) in &a.m {
                out.insert(format!("{prefix}.m.{n}"), t.clone());
            }
            for (n, t) in &a.v {
                out.insert(format!("{prefix}.v.{n}"), t.clone());
            }
        }
    }

    /// Restores moments written by [`Optimizer::export`] and the step count.
    pub fn import(&mut self, prefix: &str, state: &TensorMap<T>, steps: u64) {
        match self {
            Optimizer::Adam(a) => {
                a.t = steps;
                let (pm, pv) = (format!("{prefix}.m."), format!("{prefix}.v."));
                for (n, t) in state {
                    if let Some(k) = n.strip_prefix(&pm) {
                        a.m.insert(k.to_string(), t.clone());
                    } else if let Some(k) = n.strip_prefix(&pv) {
                        a.v.insert(k.to_string(), t.clone());
                    }
                }
            }
            Optimizer::Sgd { t, .. } => *t = steps,
        }
    }
}

/// L2 norm over every tensor of `grads`.
pub fn global_norm<T: Scalar>(grads: &TensorMap<T>) -> f64 {
    grads.values().map(|g| g.norm_sq().as_f64()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> TensorMap<f64> {
        [("x".to_string(), Tensor::scalar(x))].into_iter().collect()
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias-corrected m/sqrt(v) = sign(g) on the first step
        let mut p = single(1.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1));
        opt.step(&mut p, &single(3.0)).unwrap();
        assert!((p["x"].item() - (1.0 - 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        let mut p = single(0.5);
        let mut opt = Adam::new(AdamConfig::with_lr(0.01));
        let (mut x, mut m, mut v) = (0.5f64, 0.0, 0.0);
        for t in 1..=20 {
            let g = 2.0 * (x - 2.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            let grad = single(2.0 * (p["x"].item() - 2.0));
            opt.step(&mut p, &grad).unwrap();
        }
        assert!((p["x"].item() - x).abs() < 1e-14);
    }

    #[test]
    fn sgd_and_zero_lr() {
        let mut p = single(1.0);
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1);
        sgd.step(&mut p, &single(2.0)).unwrap();
        assert!((p["x"].item() - 0.8).abs() < 1e-15);

        let mut p = single(1.25);
        let mut adam = Optimizer::new(OptimizerKind::Adam, 0.0);
        adam.step(&mut p, &single(7.0)).unwrap();
        assert_eq!(p["x"].item().to_bits(), 1.25f64.to_bits());
    }

    #[test]
    fn unknown_gradient_is_an_error() {
        let mut p = single(1.0);
        let g: TensorMap<f64> = [("y".to_string(), Tensor::scalar(1.0))].into_iter().collect();
        assert!(Optimizer::new(OptimizerKind::Adam, 0.1).step(&mut p, &g).is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let mut p = single(1.0);
        let mut a = Optimizer::new(OptimizerKind::Adam, 0.1);
        a.step(&mut p, &single(2.0)).unwrap();
        let mut state = TensorMap::new();
        a.export("inner.c", &mut state);
        let mut b = Optimizer::<f64>::new(OptimizerKind::Adam, 0.1);
        b.import("inner.c", &state, a.steps());
        let (mut p1, mut p2) = (p.clone(), p.clone());
        a.step(&mut p1, &single(-1.0)).unwrap();
        b.step(&mut p2, &single(-1.0)).unwrap();
        assert_eq!(p1["x"].item(), p2["x"].item());
    }
}
