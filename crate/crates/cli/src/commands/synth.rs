use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use metasum::data::synthetic::{disjoint_corpus, family_corpora, resample_sentences};
use metasum::data::write_jsonl;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run(out_dir: &Path, styles: usize, per_style: usize, family_seed: u64, seed: u64, planted: bool) -> Result<()> {
    if styles == 0 || per_style == 0 {
        return Err(super::invalid("--styles and --per-style must be positive"));
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let corpora = family_corpora(family_seed, styles, per_style, seed);
    for (name, records) in &corpora {
        write_jsonl(out_dir.join(format!("{name}.jsonl")), records)?;
    }
    if planted {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        write_jsonl(
            out_dir.join("near.jsonl"),
            &resample_sentences(&corpora[0].1, per_style, &mut rng),
        )?;
        write_jsonl(out_dir.join("disjoint.jsonl"), &disjoint_corpus(per_style, &mut rng))?;
    }
    info!(
        "wrote {} corpora to {}",
        corpora.len() + 2 * usize::from(planted),
        out_dir.display()
    );
    Ok(())
}
