use std::collections::HashSet;
use std::path::{Path, PathBuf};

use metasum::data::CorpusCaps;
use metasum::evalrouge::DecodeConfig;
use metasum::metatrain::{FinetuneConfig, MetaTrainConfig, PretrainConfig};
use metasum::model::ModelConfig;
use serde::{Deserialize, Serialize};

/// Corpus loading limits; source and target lengths come from the model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub max_examples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            max_examples: CorpusCaps::default().max_examples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub k: usize,
    pub sample_cap: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig { k: 3, sample_cap: 500 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub pretrain_corpus: Option<PathBuf>,
    pub source_corpora: Vec<PathBuf>,
    pub validation_corpus: Option<PathBuf>,
    pub target_corpus: Option<PathBuf>,
    /// Separate test split for the target; without it the unselected target examples are used.
    pub target_test: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Everything a run needs, read from one TOML file.
///
/// `seed` is copied into every section that has its own seed.
/// `model.vocab_size` caps the vocabulary built from the corpora.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub train: MetaTrainConfig,
    pub finetune: FinetuneConfig,
    pub decode: DecodeConfig,
    pub rank: RankConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Rank,
    MetaTrain { from_checkpoint: bool },
    FinetuneEval,
}

/// All problems found in a configuration, one per line.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    /// Parses `path`, resolving relative corpus and output paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(vec![format!("config {}: {e}", path.display())]))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(vec![format!("config {}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in paths
            .pretrain_corpus
            .iter_mut()
            .chain(paths.validation_corpus.iter_mut())
            .chain(paths.target_corpus.iter_mut())
            .chain(paths.target_test.iter_mut())
            .chain(paths.output_dir.iter_mut())
            .chain(paths.source_corpora.iter_mut())
        {
            fix(p);
        }
    }

    /// Copies the top-level seed into every section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pretrain.seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
    }

    pub fn caps(&self) -> CorpusCaps {
        CorpusCaps {
            max_examples: self.data.max_examples,
            max_src_len: self.model.max_src_len,
            max_tgt_len: self.model.max_tgt_len,
        }
    }

    pub fn output_dir(&self) -> &Path {
        self.paths.output_dir.as_deref().expect("validated")
    }

    /// Every corpus file the vocabulary is built from (test splits excluded).
    pub fn vocabulary_sources(&self) -> Vec<PathBuf> {
        let p = &self.paths;
        let mut out: Vec<PathBuf> = p.pretrain_corpus.iter().cloned().collect();
        out.extend(p.source_corpora.iter().cloned());
        out.extend(p.validation_corpus.iter().cloned());
        out.extend(p.target_corpus.iter().cloned());
        let mut seen = HashSet::new();
        out.retain(|x| seen.insert(x.clone()));
        out
    }

    /// Checks everything `stage` depends on, collecting every problem.
    pub fn validate(&self, stage: Stage) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut check = |field: &str, r: metasum::Result<()>| {
            if let Err(e) = r {
                problems.push(format!("{field}: {e}"));
            }
        };
        check("model", self.model.validate());
        check("train", self.train.validate());
        check("decode", self.decode.validate());
        if self.data.max_examples == 0 {
            problems.push("data.max_examples: must be positive".into());
        }
        if self.model.vocab_size <= metasum::data::vocab::SPECIALS.len() {
            problems.push("model.vocab_size: must exceed the number of special tokens".into());
        }
        if self.paths.output_dir.is_none() {
            problems
                .push("paths.output_dir: missing (set it in the file, with --output-dir or METASUM_OUTPUT_DIR)".into());
        }
        let file = |problems: &mut Vec<String>, field: &str, p: &Option<PathBuf>, required: bool| match p {
            Some(p) if !p.is_file() => problems.push(format!("{field}: {} does not exist", p.display())),
            None if required => problems.push(format!("{field}: missing")),
            _ => {}
        };
        match stage {
            Stage::Pretrain => {
                file(
                    &mut problems,
                    "paths.pretrain_corpus",
                    &self.paths.pretrain_corpus,
                    true,
                );
                if self.pretrain.batch_size == 0 {
                    problems.push("pretrain.batch_size: must be positive".into());
                }
                if !(0.0..1.0).contains(&self.pretrain.lr) {
                    problems.push(format!("pretrain.lr: must be in [0, 1), got {}", self.pretrain.lr));
                }
            }
            Stage::Rank => {
                file(&mut problems, "paths.target_corpus", &self.paths.target_corpus, true);
                self.check_sources(&mut problems);
                if self.paths.source_corpora.len() < self.rank.k {
                    problems.push(format!(
                        "paths.source_corpora: {} candidates, rank.k = {}",
                        self.paths.source_corpora.len(),
                        self.rank.k
                    ));
                }
                if self.rank.sample_cap == 0 {
                    problems.push("rank.sample_cap: must be positive".into());
                }
            }
            Stage::MetaTrain { from_checkpoint } => {
                if self.paths.source_corpora.is_empty() {
                    problems.push("paths.source_corpora: missing".into());
                }
                self.check_sources(&mut problems);
                file(
                    &mut problems,
                    "paths.validation_corpus",
                    &self.paths.validation_corpus,
                    false,
                );
                if !from_checkpoint {
                    // a fresh model builds its vocabulary from the configured corpora
                    file(
                        &mut problems,
                        "paths.pretrain_corpus",
                        &self.paths.pretrain_corpus,
                        false,
                    );
                    file(&mut problems, "paths.target_corpus", &self.paths.target_corpus, false);
                }
            }
            Stage::FinetuneEval => {
                file(&mut problems, "paths.target_corpus", &self.paths.target_corpus, true);
                file(&mut problems, "paths.target_test", &self.paths.target_test, false);
                if self.finetune.batch_size == 0 || self.finetune.eval_every == 0 {
                    problems.push("finetune: batch_size and eval_every must be positive".into());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(problems))
        }
    }

    fn check_sources(&self, problems: &mut Vec<String>) {
        let key = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        let mut seen = HashSet::new();
        for p in &self.paths.source_corpora {
            if !p.is_file() {
                problems.push(format!("paths.source_corpora: {} does not exist", p.display()));
            } else if !seen.insert(key(p)) {
                problems.push(format!("paths.source_corpora: {} listed twice", p.display()));
            }
        }
        for (field, p) in [
            ("paths.validation_corpus", &self.paths.validation_corpus),
            ("paths.target_corpus", &self.paths.target_corpus),
        ] {
            if let Some(p) = p {
                if seen.contains(&key(p)) {
                    problems.push(format!("{field}: {} is also a source corpus", p.display()));
                }
            }
        }
    }
}
