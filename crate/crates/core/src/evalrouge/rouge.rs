use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision, recall and F1 of one ROUGE variant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::from_pr(ratio(overlap, hyp_total), ratio(overlap, ref_total))
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore { precision, recall, f1 }
    }
}

/// Multiset of the `n`-grams of `tokens`.
pub fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Size of the multiset intersection (each n-gram counted at most as often as in either side).
pub fn clipped_overlap<K: Eq + Hash>(a: &HashMap<K, usize>, b: &HashMap<K, usize>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .map(|(k, &c)| c.min(large.get(k).copied().unwrap_or(0)))
        .sum()
}

/// ROUGE-N with clipped counts: precision over hypothesis n-grams, recall over reference n-grams.
pub fn rouge_n<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(Error::Invalid("ROUGE-N needs n >= 1".into()));
    }
    if hyp.len() < n || reference.len() < n {
        return Ok(RougeScore::default());
    }
    let overlap = clipped_overlap(&ngram_counts(hyp, n), &ngram_counts(reference, n));
    Ok(RougeScore::from_counts(
        overlap,
        hyp.len() + 1 - n,
        reference.len() + 1 - n,
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L.
pub fn rouge_l<T: Eq>(hyp: &[T], reference: &[T]) -> RougeScore {
    RougeScore::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

impl RougeTriple {
    pub fn score<T: Eq + Hash>(hyp: &[T], reference: &[T]) -> Self {
        RougeTriple {
            r1: rouge_n(hyp, reference, 1).expect("n = 1"),
            r2: rouge_n(hyp, reference, 2).expect("n = 2"),
            rl: rouge_l(hyp, reference),
        }
    }

    /// Component-wise arithmetic mean.
    pub fn mean(items: &[RougeTriple]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let avg = |f: &dyn Fn(&RougeTriple) -> RougeScore| {
            let s = items.iter().map(f).fold((0.0, 0.0, 0.0), |acc, x| {
                (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f1)
            });
            RougeScore {
                precision: s.0 / n,
                recall: s.1 / n,
                f1: s.2 / n,
            }
        };
        RougeTriple {
            r1: avg(&|t| t.r1),
            r2: avg(&|t| t.r2),
            rl: avg(&|t| t.rl),
        }
    }
}
