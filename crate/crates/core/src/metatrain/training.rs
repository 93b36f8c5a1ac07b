//! Pretraining of the base model, the meta-training driver and target fine-tuning.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::maml::{
    loss_and_grads, outer_step, post_adaptation_loss, Episode, MetaTrainConfig, PerCorpusOptimizers, StepRecord,
};
use super::optim::{Optimizer, OptimizerKind};
use crate::autodiff::Graph;
use crate::data::{build_meta_batch, sample_task, Corpus, Example, MetaBatch, Scheduler, Task};
use crate::error::{Error, Result};
use crate::model::{Batch, Forward, Seq2Seq, TensorMap, TrainableMode};
use crate::scalar::Scalar;

const STREAM_BATCH: u64 = 1;
const STREAM_VALIDATION: u64 = 2;

/// Independent seed for `(stream, index)` derived from a run seed (splitmix64).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn minibatch<'a, R: Rng + ?Sized>(examples: &'a [Example], size: usize, rng: &mut R) -> Vec<&'a Example> {
    if examples.len() <= size {
        examples.iter().collect()
    } else {
        sample(rng, examples.len(), size)
            .into_iter()
            .map(|i| &examples[i])
            .collect()
    }
}

/// Per-step loss of a plain training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            lr: 2e-4,
            batch_size: 4,
            seed: 0,
        }
    }
}

/// Trains the base model (every tensor except the adapters) on summed NLL with
/// Adam. Adapters are bypassed. On divergence the model keeps the last finite
/// parameters and [`Error::Diverged`] is returned.
pub fn pretrain_base<T: Scalar>(
    model: &mut Seq2Seq<T>,
    examples: &[Example],
    cfg: &PretrainConfig,
    on_step: &mut dyn FnMut(&LossRecord) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if examples.is_empty() {
        return Err(Error::Invalid("pretraining needs at least one example".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("pretrain batch_size must be positive".into()));
    }
    let names: Vec<String> = model
        .params
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| !n.contains(".adapter."))
        .collect();
    let mut params: TensorMap<T> = names
        .iter()
        .map(|n| Ok((n.clone(), model.params.tensor(n)?.clone())))
        .collect::<Result<_>>()?;
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch_ex = minibatch(examples, cfg.batch_size, &mut rng);
        let batch = Batch::new(&batch_ex, model.config.max_src_len, model.config.max_tgt_len)?;
        let mut g = Graph::new();
        let (b, vars) = model.bind_trainable(&mut g, &names)?;
        let out = match model.nll(&mut g, &b, &batch, Forward::base()) {
            Ok(o) => o,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        let loss = g.value(out.loss).item().as_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = g.backward(out.loss)?;
        let grads: TensorMap<T> = names
            .iter()
            .zip(&vars)
            .map(|(n, &v)| (n.clone(), grads.get_or_zeros(v, g.shape(v))))
            .collect();
        opt.step(&mut params, &grads)?;
        if params.values().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step });
        }
        model.params.set_many(&params)?;
        let rec = LossRecord {
            step,
            loss: loss / out.tokens.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_step(&rec)?;
        log.push(rec);
    }
    Ok(log)
}

/// Best validation result seen so far.
#[derive(Debug, Clone)]
pub struct BestPsi<T> {
    pub step: usize,
    pub val_loss: f64,
    pub psi: TensorMap<T>,
}

/// Everything needed to continue a meta-training run.
#[derive(Debug, Clone)]
pub struct MetaState<T> {
    /// Completed meta-steps.
    pub step: usize,
    pub psi: TensorMap<T>,
    pub opts: PerCorpusOptimizers<T>,
    pub best: Option<BestPsi<T>>,
}

impl<T: Scalar> MetaState<T> {
    pub fn fresh(model: &Seq2Seq<T>, sources: &[Corpus], cfg: &MetaTrainConfig) -> Self {
        let mut opts = PerCorpusOptimizers::from_config(cfg);
        for c in sources {
            opts.register(&c.name);
        }
        MetaState {
            step: 0,
            psi: model.params.snapshot(cfg.trainable_mode),
            opts,
            best: None,
        }
    }
}

/// The meta-batch drawn at `step`; depends only on the seed and the step.
pub fn meta_batch_for_step(sources: &[Corpus], cfg: &MetaTrainConfig, step: usize) -> Result<MetaBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_BATCH, step as u64));
    let mut sched = Scheduler::starting_at(step * cfg.tasks_per_batch, sources.len());
    build_meta_batch(sources, cfg.tasks_per_batch, cfg.task_batch_size, &mut sched, &mut rng)
}

/// Fixed validation tasks for a run.
pub fn validation_tasks(corpus: &Corpus, cfg: &MetaTrainConfig) -> Result<Vec<Task>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_VALIDATION, 0));
    (0..cfg.validation_batches * cfg.tasks_per_batch)
        .map(|_| sample_task(corpus, cfg.task_batch_size, &mut rng))
        .collect()
}

pub fn episodes(tasks: &[Task]) -> Vec<Episode<'_, Example>> {
    tasks
        .iter()
        .map(|t| Episode {
            corpus: &t.corpus,
            train: &t.train,
            test: &t.test,
        })
        .collect()
}

/// Runs meta-steps `state.step .. cfg.meta_steps`, validating on `validation`
/// every `cfg.validation_interval` steps. On return the model holds the best
/// validated meta-parameters (or the final ones without validation). On error
/// it holds the last meta-parameters that completed a step.
pub fn meta_train<T: Scalar>(
    model: &mut Seq2Seq<T>,
    sources: &[Corpus],
    validation: Option<&Corpus>,
    cfg: &MetaTrainConfig,
    resume: Option<MetaState<T>>,
    on_step: &mut dyn FnMut(&StepRecord, &MetaState<T>) -> Result<()>,
) -> Result<(MetaState<T>, Vec<StepRecord>)> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::NoCorpora);
    }
    if let Some(v) = validation {
        if sources.iter().any(|s| s.name == v.name) {
            return Err(Error::Config(format!(
                "validation corpus {} is also a source corpus",
                v.name
            )));
        }
    }
    let mut state = resume.unwrap_or_else(|| MetaState::fresh(model, sources, cfg));
    for c in sources {
        state.opts.register(&c.name);
    }
    let val_tasks = validation.map(|v| validation_tasks(v, cfg)).transpose()?;

    let result = run_meta_steps(model, sources, val_tasks.as_deref(), cfg, &mut state, on_step);
    let chosen = match (&result, &state.best) {
        (Ok(_), Some(best)) => best.psi.clone(),
        _ => state.psi.clone(),
    };
    model.params.set_many(&chosen)?;
    result.map(|log| (state, log))
}

fn run_meta_steps<T: Scalar>(
    model: &Seq2Seq<T>,
    sources: &[Corpus],
    val_tasks: Option<&[Task]>,
    cfg: &MetaTrainConfig,
    state: &mut MetaState<T>,
    on_step: &mut dyn FnMut(&StepRecord, &MetaState<T>) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let start = Instant::now();
    let mut log = Vec::new();
    while state.step < cfg.meta_steps {
        let step = state.step;
        let batch = meta_batch_for_step(sources, cfg, step)?;
        let eps = episodes(&batch.tasks);
        let mut psi = state.psi.clone();
        let (mut rec, _) = outer_step(model, &mut psi, &eps, cfg, &mut state.opts, step)?;
        state.psi = psi;
        state.step += 1;
        if let Some(tasks) = val_tasks {
            if state.step % cfg.validation_interval == 0 || state.step == cfg.meta_steps {
                let v = post_adaptation_loss(
                    model,
                    &state.psi,
                    &episodes(tasks),
                    cfg.inner_steps,
                    cfg.inner_optimizer,
                    cfg.inner_lr,
                )?;
                rec.val_loss = Some(v);
                if state.best.as_ref().map_or(true, |b| v < b.val_loss) {
                    state.best = Some(BestPsi {
                        step: state.step,
                        val_loss: v,
                        psi: state.psi.clone(),
                    });
                }
            }
        }
        rec.seconds = start.elapsed().as_secs_f64();
        on_step(&rec, state)?;
        log.push(rec);
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub mode: TrainableMode,
    pub batch_size: usize,
    pub seed: u64,
    /// Held-out evaluation cadence in steps.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 300,
            lr: 2e-4,
            mode: TrainableMode::AdapterOnly,
            batch_size: 4,
            seed: 0,
            eval_every: 20,
            patience: 5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FinetuneReport {
    pub records: Vec<LossRecord>,
    /// `(step, per-token NLL)` on the held-out examples.
    pub heldout: Vec<(usize, f64)>,
    /// Number of updates applied to the returned parameters.
    pub best_step: usize,
    pub stopped_early: bool,
}

/// Fine-tunes the tensors selected by `cfg.mode` on `train`, starting from the
/// model's current parameters. With `heldout`, the parameters with the lowest
/// held-out NLL are kept and training stops after `patience` evaluations
/// without improvement.
pub fn finetune<T: Scalar>(
    model: &mut Seq2Seq<T>,
    train: &[Example],
    heldout: Option<&[Example]>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if train.is_empty() {
        return Err(Error::Invalid("fine-tuning needs at least one example".into()));
    }
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::Config(
            "finetune batch_size and eval_every must be positive".into(),
        ));
    }
    let mut params = model.params.snapshot(cfg.mode);
    let mut opt = Optimizer::new(OptimizerKind::Adam, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FinetuneReport::default();
    let start = Instant::now();
    let heldout_nll = |m: &Seq2Seq<T>, data: &[Example]| m.evaluate_nll(data, Forward::default());

    let mut best: Option<(f64, TensorMap<T>)> = None;
    let mut bad_evals = 0;
    if let Some(h) = heldout {
        let v = heldout_nll(model, h)?;
        report.heldout.push((0, v));
        best = Some((v, params.clone()));
    }
    for step in 0..cfg.steps {
        let batch: Vec<Example> = minibatch(train, cfg.batch_size, &mut rng)
            .into_iter()
            .cloned()
            .collect();
        let (loss, grads) = loss_and_grads(&*model, &params, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        opt.step(&mut params, &grads)?;
        report.records.push(LossRecord {
            step,
            loss: loss / crate::metatrain::Learner::<T>::count(&*model, &batch).max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
        if let Some(h) = heldout {
            if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
                model.params.set_many(&params)?;
                let v = heldout_nll(model, h)?;
                report.heldout.push((step + 1, v));
                let (best_v, _) = best.as_ref().expect("initialized with heldout");
                if v < *best_v {
                    best = Some((v, params.clone()));
                    report.best_step = step + 1;
                    bad_evals = 0;
                } else {
                    bad_evals += 1;
                    if bad_evals >= cfg.patience {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
        } else {
            report.best_step = step + 1;
        }
    }
    let chosen = match best {
        Some((_, p)) => p,
        None => params,
    };
    model.params.set_many(&chosen)?;
    Ok(report)
}
