//! `metasum`: pretraining, corpus ranking, meta-training and low-resource
//! evaluation of adapter-based summarizers.

mod artifacts;
mod commands;
mod config;
mod sparkline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metasum::model::TrainableMode;

use crate::config::ConfigError;

#[derive(Parser)]
#[command(
    name = "metasum",
    version,
    about = "Meta-transfer learning for low-resource summarization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory; overrides the file and is read from METASUM_OUTPUT_DIR when absent.
    #[arg(long, env = "METASUM_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base model on the pretraining corpus.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// Separate encoder fine-tuning stage (not supported).
        #[arg(long)]
        finetune_encoder: bool,
    },
    /// Rank source corpora against the target corpus and select the top k.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        /// Also write the [1-3], [3-5], [4-6], [5-7], [7-9] meta-dataset manifests.
        #[arg(long)]
        sections: bool,
        /// Checkpoint whose encoder scores the embedding criterion.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the embedding criterion with a freshly initialized encoder.
        #[arg(long, conflicts_with = "checkpoint")]
        untrained_embedding: bool,
    },
    /// Meta-train the adapter and layer-norm parameters on the source corpora.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        trainable: Option<Trainable>,
        /// Initial checkpoint (default: pretrain.ckpt in the output directory).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from a randomly initialized model instead of a checkpoint.
        #[arg(long, conflicts_with = "init")]
        from_random: bool,
        /// Continue the run stored in this meta checkpoint.
        #[arg(long, conflicts_with_all = ["init", "from_random"])]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Save a resumable checkpoint every this many steps.
        #[arg(long, default_value_t = 50)]
        checkpoint_every: usize,
    },
    /// Fine-tune on n target examples and report ROUGE on the target test split.
    FinetuneEval {
        #[command(flatten)]
        common: Common,
        /// Number of target training examples (10, 100 or any other count).
        #[arg(long, short)]
        n: usize,
        /// Checkpoint to adapt (default: meta.ckpt in the output directory).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also adapt from the pre-meta-training parameters and write a paired report.
        #[arg(long)]
        compare_random: bool,
    },
    /// Summarize gradient norms of one or more meta-training logs.
    GradReport {
        /// Meta-training CSV logs to compare.
        #[arg(long = "log", required = true)]
        logs: Vec<PathBuf>,
        /// Sparkline width in characters.
        #[arg(long, default_value_t = 60)]
        width: usize,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write synthetic template corpora as JSON Lines.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        styles: usize,
        #[arg(long, default_value_t = 200)]
        per_style: usize,
        /// Selects the family of templates.
        #[arg(long, default_value_t = 0)]
        family_seed: u64,
        /// Selects the sampled examples.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a corpus resampled from style0's sentences and one with disjoint vocabulary.
        #[arg(long)]
        planted: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Trainable {
    AdapterOnly,
    Full,
}

impl From<Trainable> for TrainableMode {
    fn from(t: Trainable) -> Self {
        match t {
            Trainable::AdapterOnly => TrainableMode::AdapterOnly,
            Trainable::Full => TrainableMode::Full,
        }
    }
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Pretrain {
            common,
            steps,
            finetune_encoder,
        } => commands::pretrain::run(&common, steps, finetune_encoder),
        Command::Rank {
            common,
            k,
            sections,
            checkpoint,
            untrained_embedding,
        } => commands::rank::run(&common, k, sections, checkpoint.as_deref(), untrained_embedding),
        Command::MetaTrain {
            common,
            trainable,
            init,
            from_random,
            resume,
            steps,
            checkpoint_every,
        } => commands::meta_train::run(
            &common,
            &commands::meta_train::Options {
                trainable: trainable.map(Into::into),
                init,
                from_random,
                resume,
                steps,
                checkpoint_every,
            },
        ),
        Command::FinetuneEval {
            common,
            n,
            checkpoint,
            compare_random,
        } => commands::finetune_eval::run(&common, n, checkpoint.as_deref(), compare_random),
        Command::GradReport { logs, width, out } => commands::grad_report::run(&logs, width, out.as_deref()),
        Command::Synth {
            out_dir,
            styles,
            per_style,
            family_seed,
            seed,
            planted,
        } => commands::synth::run(&out_dir, styles, per_style, family_seed, seed, planted),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err
        .chain()
        .any(|c| matches!(c.downcast_ref::<metasum::Error>(), Some(e) if e.is_numerical()))
    {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<ConfigError>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
