use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::evalrouge::{clipped_overlap, ngram_counts};

/// `|A ∩ B| / sqrt(|A| |B|)` over word sets.
pub fn cosine_set_similarity<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("cosine similarity of an empty word set".into()));
    }
    let common = a.intersection(b).count();
    Ok(common as f64 / ((a.len() * b.len()) as f64).sqrt())
}

/// Clipped bigram overlap of two bigram multisets, and their sizes.
fn bigram_stats<K: Eq + Hash>(source: &HashMap<K, usize>, target: &HashMap<K, usize>) -> (usize, usize, usize) {
    (
        clipped_overlap(source, target),
        source.values().sum(),
        target.values().sum(),
    )
}

fn bigram_ratio<T: Eq + Hash>(source: &[T], target: &[T], recall: bool) -> f64 {
    if source.len() < 2 || target.len() < 2 {
        log::warn!("ROUGE-2 of a text shorter than two tokens is defined as 0");
        return 0.0;
    }
    let (common, s, t) = bigram_stats(&ngram_counts(source, 2), &ngram_counts(target, 2));
    common as f64 / if recall { t } else { s } as f64
}

/// Shared bigrams over target bigrams.
pub fn rouge2_recall<T: Eq + Hash>(source: &[T], target: &[T]) -> f64 {
    bigram_ratio(source, target, true)
}

/// Shared bigrams over source bigrams.
pub fn rouge2_precision<T: Eq + Hash>(source: &[T], target: &[T]) -> f64 {
    bigram_ratio(source, target, false)
}

fn summed_bigrams<T: Eq + Hash>(docs: &[Vec<T>]) -> HashMap<&[T], usize> {
    let mut acc = HashMap::new();
    for d in docs {
        for (k, c) in ngram_counts(d, 2) {
            *acc.entry(k).or_insert(0) += c;
        }
    }
    acc
}

/// Bigram recall and precision of summed per-document multisets.
pub fn rouge2_documents<T: Eq + Hash>(source: &[Vec<T>], target: &[Vec<T>]) -> (f64, f64) {
    let (common, s, t) = bigram_stats(&summed_bigrams(source), &summed_bigrams(target));
    if s == 0 || t == 0 {
        log::warn!("ROUGE-2 over documents without bigrams is defined as 0");
        return (0.0, 0.0);
    }
    (common as f64 / t as f64, common as f64 / s as f64)
}

/// `|L_A - L_B|`; lower means more similar.
pub fn length_similarity(la: f64, lb: f64) -> f64 {
    (la - lb).abs()
}

/// Normalized inner product; zero vectors give 0.
pub fn normalized_inner(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean normalized inner product over aligned pairs of document embeddings.
pub fn embedding_similarity(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Invalid(
            "embedding similarity needs equally many, nonempty pairs".into(),
        ));
    }
    Ok(a.iter().zip(b).map(|(x, y)| normalized_inner(x, y)).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(s: &str) -> HashSet<&str> {
        s.split_whitespace().collect()
    }

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn cosine_fixtures() {
        assert!((cosine_set_similarity(&set("a b c"), &set("b c d")).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cosine_set_similarity(&set("a b"), &set("a b")).unwrap(), 1.0);
        assert_eq!(cosine_set_similarity(&set("a b"), &set("c d")).unwrap(), 0.0);
        assert!(cosine_set_similarity(&set(""), &set("c d")).is_err());
    }

    #[test]
    fn rouge2_fixtures() {
        let (s, t) = (toks("a b d"), toks("a b c"));
        assert_eq!(rouge2_recall(&s, &t), 0.5);
        assert_eq!(rouge2_precision(&s, &t), 0.5);
        assert_eq!(rouge2_recall(&t, &t), 1.0);
        assert_eq!(rouge2_precision(&t, &t), 1.0);
        assert_eq!(rouge2_recall(&toks("a"), &t), 0.0);
    }

    #[test]
    fn repeated_source_is_clipped() {
        let t = toks("a b c d");
        let s = toks("a b c d a b c d");
        // 7 source bigrams, 3 target bigrams, all 3 target bigrams matched once
        assert_eq!(rouge2_recall(&s, &t), 1.0);
        assert!((rouge2_precision(&s, &t) - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn length_fixtures() {
        assert_eq!(length_similarity(100.0, 120.0), 20.0);
        assert_eq!(length_similarity(7.0, 7.0), 0.0);
    }

    #[test]
    fn embedding_fixtures() {
        let a = vec![vec![1.0, 2.0, -0.5]];
        let neg = vec![vec![-1.0, -2.0, 0.5]];
        assert!((embedding_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((embedding_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(embedding_similarity(&a, &[]).is_err());
    }
}
