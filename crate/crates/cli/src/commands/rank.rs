use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use log::{info, warn};
use metasum::data::corpus_name;
use metasum::similarity::{rank_and_select, Encoder, RankOptions, SECTIONS};

use super::configure;
use crate::artifacts::{
    build_vocabulary, fresh_model, load, prepare_output, Saved, RANKING_CSV, RANKING_TXT, SELECTED,
};
use crate::config::Stage;
use crate::Common;

fn manifest(names: &[String], paths: &HashMap<String, PathBuf>) -> String {
    let mut s = String::new();
    for n in names {
        let _ = writeln!(s, "{}", paths[n].display());
    }
    s
}

pub fn run(
    common: &Common,
    k: Option<usize>,
    sections: bool,
    checkpoint: Option<&Path>,
    untrained: bool,
) -> Result<()> {
    let cfg = configure(common, Stage::Rank, |c| {
        if let Some(k) = k {
            c.rank.k = k;
        }
    })?;
    let (vocab, encoder) = match checkpoint {
        Some(p) => {
            let s = Saved::load(p)?;
            let m = s.model();
            (s.vocab, Some((m, true)))
        }
        None => {
            let v = build_vocabulary(&cfg)?;
            let m = if untrained {
                Some((fresh_model(&cfg, &v)?, false))
            } else {
                None
            };
            (v, m)
        }
    };
    let target = load(cfg.paths.target_corpus.as_deref().expect("validated"), &vocab, &cfg)?;
    let mut paths = HashMap::new();
    let mut candidates = Vec::new();
    for p in &cfg.paths.source_corpora {
        paths.insert(corpus_name(p), p.clone());
        candidates.push(load(p, &vocab, &cfg)?);
    }
    let opts = RankOptions {
        sample_cap: cfg.rank.sample_cap,
        seed: cfg.seed,
    };
    let enc = encoder.as_ref().map(|(model, trained)| Encoder {
        model,
        trained: *trained,
    });
    let report = rank_and_select(&target, &candidates, cfg.rank.k, &opts, enc)?;

    let out = cfg.output_dir();
    prepare_output(out)?;
    report.write_csv(out.join(RANKING_CSV))?;
    let summary = report.summary();
    std::fs::write(out.join(RANKING_TXT), &summary)?;
    std::fs::write(out.join(SELECTED), manifest(&report.selected(), &paths))?;
    print!("{summary}");
    if sections {
        let found = report.sections();
        if found.len() < SECTIONS.len() {
            warn!(
                "{} candidates cover only {} of {} ranking sections",
                candidates.len(),
                found.len(),
                SECTIONS.len()
            );
        }
        let dir = out.join("sections");
        std::fs::create_dir_all(&dir)?;
        for ((lo, hi), names) in found {
            let path = dir.join(format!("section_{lo}-{hi}.txt"));
            std::fs::write(&path, manifest(&names, &paths))?;
            info!("wrote {}", path.display());
        }
    }
    Ok(())
}
