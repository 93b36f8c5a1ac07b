use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use metasum::metatrain::{meta_train, BestPsi, MetaState, MetaTrainConfig, PerCorpusOptimizers};
use metasum::model::{Seq2Seq, TrainableMode};
use metasum::report::CsvLog;
use serde_json::{json, Value};

use super::{configure, invalid};
use crate::artifacts::{
    build_vocabulary, fresh_model, insert_prefixed, load, prepare_output, Saved, F, META_CKPT, META_LOG, PRETRAIN_CKPT,
};
use crate::config::Stage;
use crate::Common;

pub struct Options {
    pub trainable: Option<TrainableMode>,
    pub init: Option<PathBuf>,
    pub from_random: bool,
    pub resume: Option<PathBuf>,
    pub steps: Option<usize>,
    pub checkpoint_every: usize,
}

fn mode_name(mode: TrainableMode) -> Value {
    serde_json::to_value(mode).expect("serializable")
}

/// Meta checkpoint: model parameters (best meta-parameters when validated)
/// plus everything needed to continue the run.
fn meta_checkpoint(
    model: &Seq2Seq<F>,
    saved: &Saved,
    state: &MetaState<F>,
    init: &BTreeMap<String, metasum::Tensor<F>>,
    cfg: &MetaTrainConfig,
) -> Saved {
    let mut tensors = BTreeMap::new();
    insert_prefixed(&mut tensors, "psi", &state.psi);
    insert_prefixed(&mut tensors, "init", init);
    let (opt_state, opt_steps) = state.opts.export();
    tensors.extend(opt_state);
    if let Some(b) = &state.best {
        insert_prefixed(&mut tensors, "best", &b.psi);
    }
    let mut out = Saved::new(model, &saved.vocab, "meta").with_state(tensors);
    out.set("step", state.step.into());
    out.set("opt_steps", json!(opt_steps));
    out.set("trainable_mode", mode_name(cfg.trainable_mode));
    out.set("seed", cfg.seed.into());
    if let Some(b) = &state.best {
        out.set("best_step", b.step.into());
        out.set("best_val_loss", b.val_loss.into());
    }
    out
}

fn restore(
    saved: &Saved,
    cfg: &MetaTrainConfig,
) -> Result<(Seq2Seq<F>, MetaState<F>, BTreeMap<String, metasum::Tensor<F>>)> {
    if saved.stage() != "meta" {
        bail!("--resume needs a meta checkpoint, got a {} checkpoint", saved.stage());
    }
    if saved.get("trainable_mode") != Some(&mode_name(cfg.trainable_mode)) {
        return Err(invalid("train.trainable_mode: differs from the run being resumed"));
    }
    let step = saved
        .get("step")
        .and_then(Value::as_u64)
        .context("checkpoint lacks a step count")? as usize;
    let opt_steps: BTreeMap<String, u64> = serde_json::from_value(saved.get("opt_steps").cloned().unwrap_or_default())?;
    let mut opts = PerCorpusOptimizers::from_config(cfg);
    opts.import(&saved.checkpoint.state, &opt_steps);
    let best = match (saved.get("best_step"), saved.get("best_val_loss")) {
        (Some(s), Some(v)) => Some(BestPsi {
            step: s.as_u64().unwrap_or(0) as usize,
            val_loss: v.as_f64().unwrap_or(f64::INFINITY),
            psi: saved.state_group("best"),
        }),
        _ => None,
    };
    let psi = saved.state_group("psi");
    let mut model = saved.model();
    model.params.set_many(&psi)?;
    Ok((model, MetaState { step, psi, opts, best }, saved.state_group("init")))
}

pub fn run(common: &Common, o: &Options) -> Result<()> {
    let cfg = configure(
        common,
        Stage::MetaTrain {
            from_checkpoint: !o.from_random,
        },
        |c| {
            if let Some(t) = o.trainable {
                c.train.trainable_mode = t;
            }
            if let Some(s) = o.steps {
                c.train.meta_steps = s;
            }
        },
    )?;
    if o.checkpoint_every == 0 {
        return Err(invalid("--checkpoint-every: must be positive"));
    }
    let out = cfg.output_dir().to_path_buf();
    let tc = &cfg.train;

    let (saved, mut model, resume, init) = if let Some(r) = &o.resume {
        let saved = Saved::load(r)?;
        let (model, state, init) = restore(&saved, tc)?;
        info!("resuming at step {}", state.step);
        (saved, model, Some(state), init)
    } else {
        let saved = if o.from_random {
            let vocab = build_vocabulary(&cfg)?;
            Saved::new(&fresh_model(&cfg, &vocab)?, &vocab, "init")
        } else {
            let p = o.init.clone().unwrap_or_else(|| out.join(PRETRAIN_CKPT));
            if !p.is_file() {
                return Err(invalid(format!(
                    "--init: {} does not exist (run pretrain first or pass --from-random)",
                    p.display()
                )));
            }
            Saved::load(&p)?
        };
        let model = saved.model();
        let init = model.params.snapshot(tc.trainable_mode);
        (saved, model, None, init)
    };
    let sources = cfg
        .paths
        .source_corpora
        .iter()
        .map(|p| load(p, &saved.vocab, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let validation = cfg
        .paths
        .validation_corpus
        .as_deref()
        .map(|p| load(p, &saved.vocab, &cfg))
        .transpose()?;
    for c in &sources {
        if c.len() < 2 * tc.task_batch_size {
            return Err(invalid(format!(
                "paths.source_corpora: {} has {} examples, tasks need {}",
                c.name,
                c.len(),
                2 * tc.task_batch_size
            )));
        }
    }
    info!(
        "meta-training {} parameters ({:?}) on {} source corpora",
        model.params.count(tc.trainable_mode),
        tc.trainable_mode,
        sources.len()
    );

    prepare_output(&out)?;
    let log_path = out.join(META_LOG);
    let mut log = if resume.is_some() {
        CsvLog::append(&log_path)?
    } else {
        CsvLog::create(&log_path)?
    };
    let ckpt_path = out.join(META_CKPT);
    let base = model.clone();
    let every = o.checkpoint_every;
    let result = meta_train(
        &mut model,
        &sources,
        validation.as_ref(),
        tc,
        resume,
        &mut |rec, state| {
            log.write(rec)?;
            if state.step % every == 0 || state.step == tc.meta_steps {
                let mut current = base.clone();
                current.params.set_many(&state.psi)?;
                meta_checkpoint(&current, &saved, state, &init, tc)
                    .checkpoint
                    .save(&ckpt_path)?;
            }
            if rec.step % every == 0 || rec.val_loss.is_some() {
                info!(
                    "step {:>6}  inner {:.4}  outer {:.4}  |g| {:.3e}{}",
                    rec.step,
                    rec.inner_loss,
                    rec.outer_loss,
                    rec.grad_norm,
                    rec.val_loss.map(|v| format!("  val {v:.4}")).unwrap_or_default()
                );
            }
            Ok(())
        },
    );
    match result {
        Ok((state, _)) => {
            meta_checkpoint(&model, &saved, &state, &init, tc).save(&ckpt_path)?;
            if let Some(b) = &state.best {
                info!(
                    "kept meta-parameters from step {} (validation NLL {:.4})",
                    b.step, b.val_loss
                );
            }
            info!("wrote {}", ckpt_path.display());
            Ok(())
        }
        Err(e @ metasum::Error::GradientOverflow { .. }) => {
            warn!("{e}; aborting. {} holds the last saved step", ckpt_path.display());
            Err(e).context("meta-training aborted: gradient overflow (adapter-only training is the stable setting)")
        }
        Err(e) => Err(e.into()),
    }
}
