use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::criteria::{cosine_set_similarity, embedding_similarity, length_similarity, rouge2_documents};
use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Embedding,
    Cosine,
    Length,
    Rouge2Recall,
    Rouge2Precision,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Embedding,
        Criterion::Cosine,
        Criterion::Length,
        Criterion::Rouge2Recall,
        Criterion::Rouge2Precision,
    ];

    /// Criteria whose ranks are averaged for selection.
    pub const SELECTION: [Criterion; 3] = [Criterion::Cosine, Criterion::Rouge2Precision, Criterion::Length];

    pub fn higher_is_more_similar(self) -> bool {
        self != Criterion::Length
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Embedding => "embedding",
            Criterion::Cosine => "cosine",
            Criterion::Length => "length",
            Criterion::Rouge2Recall => "rouge2_recall",
            Criterion::Rouge2Precision => "rouge2_precision",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub criterion: Criterion,
    pub source: String,
    pub value: f64,
}

/// Encoder used for the embedding criterion.
#[derive(Clone, Copy)]
pub struct Encoder<'a, T> {
    pub model: &'a Seq2Seq<T>,
    /// False when the weights are a fresh initialization; the report carries the flag.
    pub trained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankOptions {
    /// Upper bound on sampled article pairs per comparison.
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            sample_cap: 500,
            seed: 0,
        }
    }
}

/// `m` distinct indices below `n`, a function of `(n, m, seed)` only.
pub fn sample_indices(n: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, n, m.min(n)).into_vec()
}

/// Scores of one candidate against the target under every available criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub embedding: Option<f64>,
    pub cosine: f64,
    pub length: f64,
    pub rouge2_recall: f64,
    pub rouge2_precision: f64,
}

impl PairScores {
    pub fn get(&self, c: Criterion) -> Option<f64> {
        match c {
            Criterion::Embedding => self.embedding,
            Criterion::Cosine => Some(self.cosine),
            Criterion::Length => Some(self.length),
            Criterion::Rouge2Recall => Some(self.rouge2_recall),
            Criterion::Rouge2Precision => Some(self.rouge2_precision),
        }
    }
}

fn mean_len(docs: &[Vec<String>]) -> f64 {
    docs.iter().map(Vec::len).sum::<usize>() as f64 / docs.len() as f64
}

/// Compares `source` with `target` over a seeded sample of aligned article pairs.
pub fn corpus_similarity<T: Scalar>(
    target: &Corpus,
    source: &Corpus,
    opts: &RankOptions,
    encoder: Option<Encoder<'_, T>>,
) -> Result<PairScores> {
    if target.is_empty() {
        return Err(Error::EmptyCorpus(target.name.to_string()));
    }
    if source.is_empty() {
        return Err(Error::EmptyCorpus(source.name.to_string()));
    }
    let m = opts.sample_cap.min(target.len()).min(source.len());
    if m == 0 {
        return Err(Error::Invalid("sample_cap must be at least 1".into()));
    }
    let ti = sample_indices(target.len(), m, opts.seed);
    let si = sample_indices(source.len(), m, opts.seed);
    let tokens = |c: &Corpus, idx: &[usize]| -> Vec<Vec<String>> {
        idx.iter()
            .map(|&i| crate::data::vocab::tokenize(&c.raw[i].article))
            .collect()
    };
    let (ta, sa) = (tokens(target, &ti), tokens(source, &si));

    let mut cosine = 0.0;
    for (a, b) in ta.iter().zip(&sa) {
        let a: HashSet<&str> = a.iter().map(String::as_str).collect();
        let b: HashSet<&str> = b.iter().map(String::as_str).collect();
        cosine += cosine_set_similarity(&a, &b)?;
    }
    cosine /= m as f64;
    let (rouge2_recall, rouge2_precision) = rouge2_documents(&sa, &ta);
    let length = length_similarity(mean_len(&ta), mean_len(&sa));
    let embedding = match encoder {
        Some(enc) => {
            let pick = |c: &Corpus, idx: &[usize]| {
                enc.model
                    .document_embeddings(&idx.iter().map(|&i| &c.examples[i]).collect::<Vec<_>>())
            };
            let et = pick(target, &ti)?;
            let es = pick(source, &si)?;
            Some(embedding_similarity(&et, &es)?)
        }
        None => None,
    };
    Ok(PairScores {
        embedding,
        cosine,
        length,
        rouge2_recall,
        rouge2_precision,
    })
}

/// One candidate's row in the average-rank table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub source: String,
    pub embedding: Option<f64>,
    pub embedding_rank: Option<usize>,
    pub cosine: f64,
    pub cosine_rank: usize,
    pub length: f64,
    pub length_rank: usize,
    pub rouge2_recall: f64,
    pub rouge2_recall_rank: usize,
    pub rouge2_precision: f64,
    pub rouge2_precision_rank: usize,
    pub average_rank: f64,
    pub selected: bool,
}

impl RankingRow {
    pub fn rank(&self, c: Criterion) -> Option<usize> {
        match c {
            Criterion::Embedding => self.embedding_rank,
            Criterion::Cosine => Some(self.cosine_rank),
            Criterion::Length => Some(self.length_rank),
            Criterion::Rouge2Recall => Some(self.rouge2_recall_rank),
            Criterion::Rouge2Precision => Some(self.rouge2_precision_rank),
        }
    }

    pub fn value(&self, c: Criterion) -> Option<f64> {
        match c {
            Criterion::Embedding => self.embedding,
            Criterion::Cosine => Some(self.cosine),
            Criterion::Length => Some(self.length),
            Criterion::Rouge2Recall => Some(self.rouge2_recall),
            Criterion::Rouge2Precision => Some(self.rouge2_precision),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub target: String,
    pub k: usize,
    /// Rows ordered by average rank, ties by name.
    pub rows: Vec<RankingRow>,
    /// Whether the embedding criterion used an untrained encoder.
    pub untrained_encoder: bool,
}

/// 1-based ordinal ranks; most similar first, ties by name ascending.
fn ordinal_ranks(names: &[String], values: &[f64], higher_better: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        let c = if higher_better {
            values[b].total_cmp(&values[a])
        } else {
            values[a].total_cmp(&values[b])
        };
        c.then_with(|| names[a].cmp(&names[b]))
    });
    let mut ranks = vec![0; names.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Scores every candidate, ranks them per criterion and selects the `k`
/// best by mean rank over cosine, ROUGE-2 precision and length.
pub fn rank_and_select<T: Scalar>(
    target: &Corpus,
    candidates: &[Corpus],
    k: usize,
    opts: &RankOptions,
    encoder: Option<Encoder<'_, T>>,
) -> Result<RankingReport> {
    if candidates.len() < k {
        return Err(Error::Invalid(format!(
            "{} candidate corpora, {k} requested",
            candidates.len()
        )));
    }
    let mut seen = HashSet::new();
    for c in candidates {
        if c.name == target.name {
            return Err(Error::Invalid(format!(
                "target corpus {} is among the candidates",
                c.name
            )));
        }
        if !seen.insert(c.name.clone()) {
            return Err(Error::Invalid(format!("duplicate candidate corpus {}", c.name)));
        }
    }
    let scores = candidates
        .par_iter()
        .map(|c| corpus_similarity(target, c, opts, encoder))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = candidates.iter().map(|c| c.name.to_string()).collect();
    let ranks_for = |c: Criterion| -> Option<Vec<usize>> {
        let vals: Option<Vec<f64>> = scores.iter().map(|s| s.get(c)).collect();
        vals.map(|v| ordinal_ranks(&names, &v, c.higher_is_more_similar()))
    };
    let emb = ranks_for(Criterion::Embedding);
    let cos = ranks_for(Criterion::Cosine).expect("always present");
    let len = ranks_for(Criterion::Length).expect("always present");
    let r2r = ranks_for(Criterion::Rouge2Recall).expect("always present");
    let r2p = ranks_for(Criterion::Rouge2Precision).expect("always present");

    let mut rows: Vec<RankingRow> = (0..names.len())
        .map(|i| RankingRow {
            source: names[i].clone(),
            embedding: scores[i].embedding,
            embedding_rank: emb.as_ref().map(|r| r[i]),
            cosine: scores[i].cosine,
            cosine_rank: cos[i],
            length: scores[i].length,
            length_rank: len[i],
            rouge2_recall: scores[i].rouge2_recall,
            rouge2_recall_rank: r2r[i],
            rouge2_precision: scores[i].rouge2_precision,
            rouge2_precision_rank: r2p[i],
            average_rank: (cos[i] + r2p[i] + len[i]) as f64 / 3.0,
            selected: false,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.average_rank
            .total_cmp(&b.average_rank)
            .then_with(|| a.source.cmp(&b.source))
    });
    for row in rows.iter_mut().take(k) {
        row.selected = true;
    }
    Ok(RankingReport {
        target: target.name.to_string(),
        k,
        rows,
        untrained_encoder: encoder.is_some_and(|e| !e.trained),
    })
}

/// Ranking sections swept when building alternative meta-datasets, as 1-based inclusive ranges.
pub const SECTIONS: [(usize, usize); 5] = [(1, 3), (3, 5), (4, 6), (5, 7), (7, 9)];

impl RankingReport {
    pub fn selected(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|r| r.selected)
            .map(|r| r.source.clone())
            .collect()
    }

    /// Candidates ordered from most to least similar under one criterion.
    pub fn ordering(&self, c: Criterion) -> Option<Vec<SimilarityScore>> {
        let mut items: Vec<(usize, SimilarityScore)> = self
            .rows
            .iter()
            .map(|r| {
                Some((
                    r.rank(c)?,
                    SimilarityScore {
                        criterion: c,
                        source: r.source.clone(),
                        value: r.value(c)?,
                    },
                ))
            })
            .collect::<Option<_>>()?;
        items.sort_by_key(|(r, _)| *r);
        Some(items.into_iter().map(|(_, s)| s).collect())
    }

    /// Corpus names in each average-rank section that the candidate count fully covers.
    pub fn sections(&self) -> Vec<((usize, usize), Vec<String>)> {
        SECTIONS
            .iter()
            .filter(|(_, hi)| *hi <= self.rows.len())
            .map(|&(lo, hi)| {
                (
                    (lo, hi),
                    self.rows[lo - 1..hi].iter().map(|r| r.source.clone()).collect(),
                )
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_csv(path, &self.rows)
    }

    /// Reads a table written by [`RankingReport::write_csv`].
    pub fn read_csv(path: impl AsRef<Path>, target: &str) -> Result<Self> {
        let rows: Vec<RankingRow> = crate::report::read_csv(path)?;
        let k = rows.iter().filter(|r| r.selected).count();
        Ok(RankingReport {
            target: target.to_string(),
            k,
            rows,
            untrained_encoder: false,
        })
    }

    /// Plain-text table: one line per criterion listing corpora from most to least similar.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "target: {}", self.target);
        if self.untrained_encoder {
            let _ = writeln!(s, "note: embedding criterion computed with an untrained encoder");
        }
        let width = Criterion::ALL.iter().map(|c| c.name().len()).max().unwrap_or(0);
        for c in Criterion::ALL {
            if let Some(order) = self.ordering(c) {
                let names: Vec<&str> = order.iter().map(|s| s.source.as_str()).collect();
                let _ = writeln!(s, "{:width$}  {}", c.name(), names.join(" > "));
            }
        }
        let avg: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{} ({:.2})", r.source, r.average_rank))
            .collect();
        let _ = writeln!(s, "{:width$}  {}", "average", avg.join(" > "));
        let _ = writeln!(s, "selected (k={}): {}", self.k, self.selected().join(", "));
        s
    }
}
