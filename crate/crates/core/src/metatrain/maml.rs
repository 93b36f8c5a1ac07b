//! Inner adaptation and the outer meta-update over named trainable tensors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learner::Learner;
use super::optim::{global_norm, Optimizer, OptimizerKind};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{TensorMap, TrainableMode};
use crate::scalar::Scalar;

/// Default ceiling on the meta-gradient norm before a run is aborted.
pub const DEFAULT_GRAD_CEILING: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub tasks_per_batch: usize,
    /// Examples in each of a task's training and testing sets (K).
    pub task_batch_size: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub meta_steps: usize,
    pub first_order: bool,
    pub trainable_mode: TrainableMode,
    pub inner_optimizer: OptimizerKind,
    pub grad_norm_ceiling: f64,
    pub validation_interval: usize,
    /// Meta-batches averaged for each validation estimate.
    pub validation_batches: usize,
    pub seed: u64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        MetaTrainConfig {
            tasks_per_batch: 3,
            task_batch_size: 4,
            inner_steps: 4,
            inner_lr: 2e-4,
            outer_lr: 2e-4,
            meta_steps: 6000,
            first_order: true,
            trainable_mode: TrainableMode::AdapterOnly,
            inner_optimizer: OptimizerKind::Adam,
            grad_norm_ceiling: DEFAULT_GRAD_CEILING,
            validation_interval: 200,
            validation_batches: 600,
            seed: 0,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("tasks_per_batch", self.tasks_per_batch),
            ("task_batch_size", self.task_batch_size),
            ("validation_interval", self.validation_interval),
            ("validation_batches", self.validation_batches),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("inner_lr", self.inner_lr), ("outer_lr", self.outer_lr)] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("{name} must be in [0, 1), got {v}"));
            }
        }
        if !(self.grad_norm_ceiling > 0.0) {
            problems.push("grad_norm_ceiling must be positive".into());
        }
        if !self.first_order && self.inner_optimizer != OptimizerKind::Sgd {
            problems.push("exact (second-order) mode requires the sgd inner optimizer".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One task seen by the meta-learner.
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a, E> {
    pub corpus: &'a str,
    pub train: &'a [E],
    pub test: &'a [E],
}

fn bind_leaves<T: Scalar>(g: &mut Graph<T>, params: &TensorMap<T>) -> Result<BTreeMap<String, Var>> {
    params
        .iter()
        .map(|(n, t)| Ok((n.clone(), g.leaf(t.clone())?)))
        .collect()
}

/// Loss of `data` at `params` and its gradient with respect to every tensor.
pub fn loss_and_grads<T: Scalar, L: Learner<T>>(
    learner: &L,
    params: &TensorMap<T>,
    data: &[L::Example],
) -> Result<(f64, TensorMap<T>)> {
    let mut g = Graph::new();
    let vars = bind_leaves(&mut g, params)?;
    let loss = learner.loss(&mut g, &vars, data)?;
    let value = g.value(loss).item().as_f64();
    let grads = match g.backward(loss) {
        Ok(gr) => vars
            .iter()
            .map(|(n, &v)| (n.clone(), gr.get_or_zeros(v, g.shape(v))))
            .collect(),
        Err(Error::Detached) => params
            .iter()
            .map(|(n, t)| (n.clone(), crate::tensor::Tensor::zeros(t.shape())))
            .collect(),
        Err(e) => return Err(e),
    };
    Ok((value, grads))
}

/// Loss of `data` at `params` without building a gradient graph.
pub fn evaluate_loss<T: Scalar, L: Learner<T>>(learner: &L, params: &TensorMap<T>, data: &[L::Example]) -> Result<f64> {
    let mut g = Graph::no_grad();
    let vars = params
        .iter()
        .map(|(n, t)| Ok((n.clone(), g.constant(t.clone())?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let loss = learner.loss(&mut g, &vars, data)?;
    Ok(g.value(loss).item().as_f64())
}

/// A base-learner after inner adaptation.
#[derive(Debug, Clone)]
pub struct Adapted<T> {
    pub phi: TensorMap<T>,
    /// Training loss before each inner update.
    pub losses: Vec<f64>,
}

/// `steps` optimizer updates of a copy of `psi` on `train`.
pub fn inner_adapt<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &TensorMap<T>,
    train: &[L::Example],
    steps: usize,
    opt: &mut Optimizer<T>,
) -> Result<Adapted<T>> {
    let mut phi = psi.clone();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (loss, grads) = loss_and_grads(learner, &phi, train)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "inner loss" });
        }
        losses.push(loss);
        opt.step(&mut phi, &grads)?;
    }
    Ok(Adapted { phi, losses })
}

/// Post-adaptation test loss and its exact gradient with respect to `psi`,
/// differentiating through `steps` plain gradient-descent updates on `train`.
pub fn exact_meta_gradient<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &TensorMap<T>,
    train: &[L::Example],
    test: &[L::Example],
    steps: usize,
    lr: f64,
) -> Result<(f64, TensorMap<T>, Vec<f64>)> {
    let mut g = Graph::new();
    let leaves = bind_leaves(&mut g, psi)?;
    let names: Vec<String> = leaves.keys().cloned().collect();
    let mut phi = leaves.clone();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let loss = learner.loss(&mut g, &phi, train)?;
        losses.push(g.value(loss).item().as_f64());
        let vars: Vec<Var> = names.iter().map(|n| phi[n]).collect();
        let grads = g.grad(loss, &vars, true)?;
        for ((n, &v), gr) in names.iter().zip(&vars).zip(grads) {
            let step = g.scale(gr, T::lit(lr))?;
            phi.insert(n.clone(), g.sub(v, step)?);
        }
    }
    let test_loss = learner.loss(&mut g, &phi, test)?;
    let value = g.value(test_loss).item().as_f64();
    let grads = g.backward(test_loss)?;
    let out = names
        .iter()
        .map(|n| {
            let v = leaves[n];
            (n.clone(), grads.get_or_zeros(v, g.shape(v)))
        })
        .collect();
    Ok((value, out, losses))
}

/// Inner optimizers keyed by corpus plus the single outer optimizer.
#[derive(Debug, Clone)]
pub struct PerCorpusOptimizers<T> {
    pub inner_kind: OptimizerKind,
    pub inner_lr: f64,
    pub inner: BTreeMap<String, Optimizer<T>>,
    pub outer: Optimizer<T>,
}

impl<T: Scalar> PerCorpusOptimizers<T> {
    pub fn new(inner_kind: OptimizerKind, inner_lr: f64, outer_lr: f64) -> Self {
        PerCorpusOptimizers {
            inner_kind,
            inner_lr,
            inner: BTreeMap::new(),
            outer: Optimizer::new(OptimizerKind::Adam, outer_lr),
        }
    }

    pub fn from_config(cfg: &MetaTrainConfig) -> Self {
        Self::new(cfg.inner_optimizer, cfg.inner_lr, cfg.outer_lr)
    }

    pub fn register(&mut self, corpus: &str) {
        let (kind, lr) = (self.inner_kind, self.inner_lr);
        self.inner
            .entry(corpus.to_string())
            .or_insert_with(|| Optimizer::new(kind, lr));
    }

    pub fn inner(&self, corpus: &str) -> Option<&Optimizer<T>> {
        self.inner.get(corpus)
    }

    pub fn inner_mut(&mut self, corpus: &str) -> Option<&mut Optimizer<T>> {
        self.inner.get_mut(corpus)
    }

    /// Moments of every optimizer as named tensors, plus step counts.
    pub fn export(&self) -> (TensorMap<T>, BTreeMap<String, u64>) {
        let mut state = TensorMap::new();
        let mut steps = BTreeMap::new();
        self.outer.export("opt.outer", &mut state);
        steps.insert("outer".to_string(), self.outer.steps());
        for (c, o) in &self.inner {
            o.export(&format!("opt.inner.{c}"), &mut state);
            steps.insert(c.clone(), o.steps());
        }
        (state, steps)
    }

    pub fn import(&mut self, state: &TensorMap<T>, steps: &BTreeMap<String, u64>) {
        let outer_steps = steps.get("outer").copied().unwrap_or(0);
        self.outer.import("opt.outer", state, outer_steps);
        for (c, &n) in steps {
            if c == "outer" {
                continue;
            }
            self.register(c);
            let o = self.inner.get_mut(c).expect("registered");
            o.import(&format!("opt.inner.{c}"), state, n);
        }
    }
}

/// Result of adapting to, then testing on, one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome<T> {
    pub corpus: String,
    pub phi: TensorMap<T>,
    pub inner_losses: Vec<f64>,
    /// Per-loss-term training loss at the adapted parameters.
    pub train_loss: f64,
    /// Per-loss-term testing loss at the adapted parameters.
    pub test_loss: f64,
    /// Gradient of the summed test loss with respect to the meta-parameters.
    pub grads: TensorMap<T>,
}

fn run_task<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &TensorMap<T>,
    ep: &Episode<'_, L::Example>,
    cfg: &MetaTrainConfig,
    opt: &mut Optimizer<T>,
) -> Result<TaskOutcome<T>> {
    let (phi, inner_losses, test_sum, grads) = if cfg.first_order {
        let a = inner_adapt(learner, psi, ep.train, cfg.inner_steps, opt)?;
        let (test, grads) = loss_and_grads(learner, &a.phi, ep.test)?;
        (a.phi, a.losses, test, grads)
    } else {
        if !matches!(opt, Optimizer::Sgd { .. }) {
            return Err(Error::Config("exact mode requires the sgd inner optimizer".into()));
        }
        let (test, grads, losses) =
            exact_meta_gradient(learner, psi, ep.train, ep.test, cfg.inner_steps, cfg.inner_lr)?;
        // Replay the inner updates to materialize phi and advance the step count.
        let a = inner_adapt(learner, psi, ep.train, cfg.inner_steps, opt)?;
        (a.phi, losses, test, grads)
    };
    if !test_sum.is_finite() {
        return Err(Error::NonFinite { op: "outer loss" });
    }
    let train_sum = evaluate_loss(learner, &phi, ep.train)?;
    Ok(TaskOutcome {
        corpus: ep.corpus.to_string(),
        phi,
        inner_losses,
        train_loss: train_sum / learner.count(ep.train).max(1) as f64,
        test_loss: test_sum / learner.count(ep.test).max(1) as f64,
        grads,
    })
}

/// Adapts to every task of a meta-batch. Corpora run in parallel; tasks of
/// one corpus run in order and share that corpus's inner optimizer.
pub fn adapt_batch<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &TensorMap<T>,
    episodes: &[Episode<'_, L::Example>],
    cfg: &MetaTrainConfig,
    opts: &mut PerCorpusOptimizers<T>,
) -> Result<Vec<TaskOutcome<T>>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ep) in episodes.iter().enumerate() {
        if !opts.inner.contains_key(ep.corpus) {
            return Err(Error::Invalid(format!(
                "no inner optimizer registered for corpus {}",
                ep.corpus
            )));
        }
        groups.entry(ep.corpus).or_default().push(i);
    }
    let mut work: Vec<(&str, Optimizer<T>, Vec<usize>)> = groups
        .into_iter()
        .map(|(c, idx)| (c, opts.inner.remove(c).expect("checked above"), idx))
        .collect();
    let results: Vec<Result<Vec<(usize, TaskOutcome<T>)>>> = work
        .par_iter_mut()
        .map(|(_, opt, idx)| {
            idx.iter()
                .map(|&i| Ok((i, run_task(learner, psi, &episodes[i], cfg, opt)?)))
                .collect()
        })
        .collect();
    for (c, opt, _) in work {
        opts.inner.insert(c.to_string(), opt);
    }
    let mut out: Vec<(usize, TaskOutcome<T>)> = Vec::with_capacity(episodes.len());
    for r in results {
        out.extend(r?);
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, o)| o).collect())
}

/// One row of the meta-training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub inner_loss: f64,
    pub outer_loss: f64,
    pub grad_norm: f64,
    pub seconds: f64,
    pub val_loss: Option<f64>,
}

/// One meta-update of `psi` from a meta-batch.
pub fn outer_step<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &mut TensorMap<T>,
    episodes: &[Episode<'_, L::Example>],
    cfg: &MetaTrainConfig,
    opts: &mut PerCorpusOptimizers<T>,
    step: usize,
) -> Result<(StepRecord, Vec<TaskOutcome<T>>)> {
    if episodes.is_empty() {
        return Err(Error::Invalid("empty meta-batch".into()));
    }
    let outcomes = adapt_batch(learner, psi, episodes, cfg, opts)?;
    let mut total: TensorMap<T> = psi
        .iter()
        .map(|(n, t)| (n.clone(), crate::tensor::Tensor::zeros(t.shape())))
        .collect();
    for o in &outcomes {
        for (n, g) in &o.grads {
            let acc = total.get_mut(n).expect("same names as psi");
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + x;
            }
        }
    }
    let norm = global_norm(&total);
    if !norm.is_finite() || norm > cfg.grad_norm_ceiling {
        return Err(Error::GradientOverflow {
            step,
            norm,
            ceiling: cfg.grad_norm_ceiling,
        });
    }
    opts.outer.step(psi, &total)?;
    let n = outcomes.len() as f64;
    let record = StepRecord {
        step,
        inner_loss: outcomes.iter().map(|o| o.train_loss).sum::<f64>() / n,
        outer_loss: outcomes.iter().map(|o| o.test_loss).sum::<f64>() / n,
        grad_norm: norm,
        seconds: 0.0,
        val_loss: None,
    };
    Ok((record, outcomes))
}

/// Mean per-term test loss after adapting a fresh inner optimizer to each task.
pub fn post_adaptation_loss<T: Scalar, L: Learner<T>>(
    learner: &L,
    psi: &TensorMap<T>,
    episodes: &[Episode<'_, L::Example>],
    steps: usize,
    kind: OptimizerKind,
    lr: f64,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Invalid("no evaluation tasks".into()));
    }
    let losses = episodes
        .par_iter()
        .map(|ep| {
            let mut opt = Optimizer::new(kind, lr);
            let a = inner_adapt(learner, psi, ep.train, steps, &mut opt)?;
            Ok(evaluate_loss(learner, &a.phi, ep.test)? / learner.count(ep.test).max(1) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
