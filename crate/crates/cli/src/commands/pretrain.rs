use anyhow::Result;
use log::info;
use metasum::metatrain::pretrain_base;
use metasum::report::CsvLog;

use super::{configure, invalid};
use crate::artifacts::{build_vocabulary, fresh_model, load, prepare_output, Saved, PRETRAIN_CKPT, PRETRAIN_LOG};
use crate::config::Stage;
use crate::Common;

pub fn run(common: &Common, steps: Option<usize>, finetune_encoder: bool) -> Result<()> {
    if finetune_encoder {
        return Err(invalid(
            "--finetune-encoder: a separate encoder fine-tuning stage is not supported; pretrain trains the whole base model",
        ));
    }
    let cfg = configure(common, Stage::Pretrain, |c| {
        if let Some(s) = steps {
            c.pretrain.steps = s;
        }
    })?;
    let vocab = build_vocabulary(&cfg)?;
    let corpus = load(cfg.paths.pretrain_corpus.as_deref().expect("validated"), &vocab, &cfg)?;
    let mut model = fresh_model(&cfg, &vocab)?;
    info!(
        "pretraining on {} ({} examples, vocabulary {}, {} parameters)",
        corpus.name,
        corpus.len(),
        vocab.len(),
        model.params.count(metasum::model::TrainableMode::Full)
    );

    let out = cfg.output_dir();
    prepare_output(out)?;
    let mut log = CsvLog::create(out.join(PRETRAIN_LOG))?;
    let every = (cfg.pretrain.steps / 20).max(1);
    let result = pretrain_base(&mut model, &corpus.examples, &cfg.pretrain, &mut |rec| {
        if rec.step % every == 0 || rec.step + 1 == cfg.pretrain.steps {
            info!("step {:>6}  loss {:.4}", rec.step, rec.loss);
        }
        log.write(rec)
    });
    // after divergence the model holds the last finite parameters
    let mut saved = Saved::new(&model, &vocab, "pretrain");
    saved.set("seed", cfg.seed.into());
    saved.save(&out.join(PRETRAIN_CKPT))?;
    result?;
    info!("wrote {}", out.join(PRETRAIN_CKPT).display());
    Ok(())
}
