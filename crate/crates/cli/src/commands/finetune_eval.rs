use std::path::Path;

use anyhow::Result;
use log::info;
use metasum::data::{shuffled_prefix, Example};
use metasum::evalrouge::{evaluate_corpus, Evaluation};
use metasum::metatrain::finetune;
use metasum::model::Seq2Seq;
use metasum::report::{evaluation_rows, write_csv, CsvLog, AGGREGATE};
use serde::{Deserialize, Serialize};

use super::{configure, invalid};
use crate::artifacts::{
    load, prepare_output, Saved, ADAPTED_CKPT, EVAL_REPORT, F, FINETUNE_LOG, META_CKPT, PAIRED_REPORT, SELECTION,
};
use crate::config::{RunConfig, Stage};
use crate::Common;

/// Position in the seeded shuffle and the example's index in the target corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub seed: u64,
    pub position: usize,
    pub index: usize,
}

/// ROUGE F1 of the meta-initialized and the pre-meta-training runs on one test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub id: String,
    pub meta_r1_f1: f64,
    pub meta_r2_f1: f64,
    pub meta_rl_f1: f64,
    pub random_r1_f1: f64,
    pub random_r2_f1: f64,
    pub random_rl_f1: f64,
}

fn adapt_and_score(
    mut model: Seq2Seq<F>,
    train: &[Example],
    test: &[Example],
    cfg: &RunConfig,
    log: Option<&Path>,
) -> Result<(Seq2Seq<F>, Evaluation)> {
    let report = finetune(&mut model, train, None, &cfg.finetune)?;
    if let Some(p) = log {
        let mut w = CsvLog::create(p)?;
        for r in &report.records {
            w.write(r)?;
        }
    }
    let eval = evaluate_corpus(&model, test, &cfg.decode)?;
    Ok((model, eval))
}

fn example_id(e: &Example) -> String {
    format!("{}:{}", e.source_corpus, e.index)
}

pub fn run(common: &Common, n: usize, checkpoint: Option<&Path>, compare_random: bool) -> Result<()> {
    let cfg = configure(common, Stage::FinetuneEval, |_| {})?;
    if n == 0 {
        return Err(invalid("--n: must be at least 1"));
    }
    let out = cfg.output_dir().to_path_buf();
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| out.join(META_CKPT));
    if !ckpt.is_file() {
        return Err(invalid(format!("--checkpoint: {} does not exist", ckpt.display())));
    }
    let saved = Saved::load(&ckpt)?;
    let target = load(
        cfg.paths.target_corpus.as_deref().expect("validated"),
        &saved.vocab,
        &cfg,
    )?;
    let (selected, test): (Vec<usize>, Vec<Example>) = match &cfg.paths.target_test {
        Some(p) => {
            if target.len() < n {
                return Err(invalid(format!(
                    "paths.target_corpus: {} examples, --n {n} requested",
                    target.len()
                )));
            }
            (
                shuffled_prefix(target.len(), n, cfg.seed)?,
                load(p, &saved.vocab, &cfg)?.examples,
            )
        }
        None => {
            if target.len() <= n {
                return Err(invalid(format!(
                    "paths.target_corpus: {} examples cannot hold --n {n} plus a test split (set paths.target_test)",
                    target.len()
                )));
            }
            let order = shuffled_prefix(target.len(), target.len(), cfg.seed)?;
            let mut rest = order[n..].to_vec();
            rest.sort_unstable();
            (
                order[..n].to_vec(),
                rest.into_iter().map(|i| target.examples[i].clone()).collect(),
            )
        }
    };
    let train: Vec<Example> = selected.iter().map(|&i| target.examples[i].clone()).collect();
    info!(
        "adapting {} checkpoint on {} of {} target examples, testing on {}",
        saved.stage(),
        n,
        target.len(),
        test.len()
    );

    prepare_output(&out)?;
    let rows: Vec<SelectionRow> = selected
        .iter()
        .enumerate()
        .map(|(position, &index)| SelectionRow {
            seed: cfg.seed,
            position,
            index,
        })
        .collect();
    write_csv(out.join(SELECTION), &rows)?;

    let (adapted, eval) = adapt_and_score(saved.model(), &train, &test, &cfg, Some(&out.join(FINETUNE_LOG)))?;
    let mut adapted_ckpt = Saved::new(&adapted, &saved.vocab, "finetune");
    adapted_ckpt.set("n", n.into());
    adapted_ckpt.set("seed", cfg.seed.into());
    adapted_ckpt.save(&out.join(ADAPTED_CKPT))?;
    let ids: Vec<String> = test.iter().map(example_id).collect();
    write_csv(out.join(EVAL_REPORT), &evaluation_rows(&eval, &ids))?;
    let m = eval.mean;
    println!(
        "ROUGE-1 {:.4}  ROUGE-2 {:.4}  ROUGE-L {:.4}  ({} test examples)",
        m.r1.f1,
        m.r2.f1,
        m.rl.f1,
        test.len()
    );

    if compare_random {
        let mut baseline = saved.model();
        let init = saved.state_group("init");
        if !init.is_empty() {
            baseline.params.set_many(&init)?;
        }
        let (_, random) = adapt_and_score(baseline, &train, &test, &cfg, None)?;
        let pair = |id: String, a: &metasum::evalrouge::RougeTriple, b: &metasum::evalrouge::RougeTriple| PairedRow {
            id,
            meta_r1_f1: a.r1.f1,
            meta_r2_f1: a.r2.f1,
            meta_rl_f1: a.rl.f1,
            random_r1_f1: b.r1.f1,
            random_r2_f1: b.r2.f1,
            random_rl_f1: b.rl.f1,
        };
        let mut paired: Vec<PairedRow> = ids
            .iter()
            .zip(eval.scores.iter().zip(&random.scores))
            .map(|(id, (a, b))| pair(id.clone(), a, b))
            .collect();
        paired.push(pair(AGGREGATE.into(), &eval.mean, &random.mean));
        write_csv(out.join(PAIRED_REPORT), &paired)?;
        let r = random.mean;
        println!(
            "pre-meta init: ROUGE-1 {:.4}  ROUGE-2 {:.4}  ROUGE-L {:.4}",
            r.r1.f1, r.r2.f1, r.rl.f1
        );
    }
    Ok(())
}
