//! Meta-transfer optimization: inner adaptation of the meta-parameters per task,
//! outer updates across a meta-batch, plus base pretraining and fine-tuning.

pub mod learner;
pub mod maml;
pub mod optim;
pub mod training;

#[cfg(test)]
mod tests;

pub use learner::{Learner, LinearRegression, Point, Quadratic};
pub use maml::{
    adapt_batch, evaluate_loss, exact_meta_gradient, inner_adapt, loss_and_grads, outer_step, post_adaptation_loss,
    Adapted, Episode, MetaTrainConfig, PerCorpusOptimizers, StepRecord, TaskOutcome, DEFAULT_GRAD_CEILING,
};
pub use optim::{global_norm, Adam, AdamConfig, Optimizer, OptimizerKind};
pub use training::{
    derive_seed, episodes, finetune, meta_batch_for_step, meta_train, pretrain_base, validation_tasks, BestPsi,
    FinetuneConfig, FinetuneReport, LossRecord, MetaState, PretrainConfig,
};
