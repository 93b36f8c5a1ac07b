pub mod finetune_eval;
pub mod grad_report;
pub mod meta_train;
pub mod pretrain;
pub mod rank;
pub mod synth;

use crate::config::{ConfigError, RunConfig, Stage};
use crate::Common;

/// Reads the config, applies flag and environment overrides and validates it for `stage`.
pub fn configure(common: &Common, stage: Stage, adjust: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        cfg.paths.output_dir = Some(dir.clone());
    }
    cfg.apply_seed(common.seed.unwrap_or(cfg.seed));
    adjust(&mut cfg);
    cfg.validate(stage)?;
    Ok(cfg)
}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(vec![msg.into()]).into()
}
