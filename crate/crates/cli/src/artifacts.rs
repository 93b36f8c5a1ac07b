use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use metasum::data::{load_corpus, read_jsonl, Corpus, Vocabulary};
use metasum::model::{Checkpoint, ModelConfig, Seq2Seq, TensorMap};
use serde_json::{json, Value};

use crate::config::RunConfig;

pub type F = f64;

pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_loss.csv";
pub const META_CKPT: &str = "meta.ckpt";
pub const META_LOG: &str = "meta_log.csv";
pub const ADAPTED_CKPT: &str = "adapted.ckpt";
pub const EVAL_REPORT: &str = "eval_report.csv";
pub const PAIRED_REPORT: &str = "paired_report.csv";
pub const SELECTION: &str = "selection.csv";
pub const FINETUNE_LOG: &str = "finetune_loss.csv";
pub const RANKING_CSV: &str = "ranking.csv";
pub const RANKING_TXT: &str = "ranking.txt";
pub const SELECTED: &str = "selected.txt";

/// Vocabulary over the articles and summaries of every configured corpus.
pub fn build_vocabulary(cfg: &RunConfig) -> Result<Vocabulary> {
    let mut records = Vec::new();
    for p in cfg.vocabulary_sources() {
        records.extend(read_jsonl(&p, cfg.data.max_examples).with_context(|| format!("reading {}", p.display()))?);
    }
    if records.is_empty() {
        bail!("no corpus text to build a vocabulary from");
    }
    Ok(Vocabulary::build(
        records.iter().flat_map(|r| [r.article.as_str(), r.summary.as_str()]),
        cfg.model.vocab_size,
    ))
}

pub fn fresh_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Seq2Seq<F>> {
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..cfg.model.clone()
    };
    Ok(Seq2Seq::new(config, cfg.seed)?)
}

pub fn load(path: &Path, vocab: &Vocabulary, cfg: &RunConfig) -> Result<Corpus> {
    load_corpus(path, vocab, cfg.caps()).with_context(|| format!("loading corpus {}", path.display()))
}

/// Checkpoint plus the vocabulary stored in its metadata.
pub struct Saved {
    pub checkpoint: Checkpoint<F>,
    pub vocab: Vocabulary,
}

impl Saved {
    pub fn new(model: &Seq2Seq<F>, vocab: &Vocabulary, stage: &str) -> Self {
        let mut checkpoint = Checkpoint::from_model(model);
        checkpoint.extra = json!({ "stage": stage, "vocab": vocab.tokens() });
        Saved {
            checkpoint,
            vocab: vocab.clone(),
        }
    }

    pub fn with_state(mut self, state: TensorMap<F>) -> Self {
        self.checkpoint.state = state;
        self
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.checkpoint.extra[key] = value;
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.checkpoint.extra.get(key)
    }

    pub fn stage(&self) -> &str {
        self.get("stage").and_then(Value::as_str).unwrap_or("unknown")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint
            .save(path)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let checkpoint =
            Checkpoint::<F>::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let tokens: Vec<String> = checkpoint
            .extra
            .get("vocab")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| anyhow!("checkpoint {} carries no vocabulary", path.display()))?;
        let vocab = Vocabulary::from_tokens(tokens)?;
        if vocab.len() != checkpoint.config.vocab_size {
            bail!("checkpoint {} vocabulary does not match its model", path.display());
        }
        Ok(Saved { checkpoint, vocab })
    }

    /// Tensors stored under `prefix.`, with the prefix removed.
    pub fn state_group(&self, prefix: &str) -> TensorMap<F> {
        prefixed(&self.checkpoint.state, prefix)
    }

    pub fn model(&self) -> Seq2Seq<F> {
        self.checkpoint.clone().into_model()
    }
}

pub fn prefixed(map: &TensorMap<F>, prefix: &str) -> TensorMap<F> {
    let p = format!("{prefix}.");
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|n| (n.to_string(), v.clone())))
        .collect()
}

pub fn insert_prefixed(into: &mut TensorMap<F>, prefix: &str, from: &TensorMap<F>) {
    for (k, v) in from {
        into.insert(format!("{prefix}.{k}"), v.clone());
    }
}

/// Creates the output directory once validation has passed.
pub fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
