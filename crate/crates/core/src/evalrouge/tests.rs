use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::synthetic::family_corpora;
use crate::data::vocab::PAD;
use crate::data::{corpora_from_raw, Corpus, CorpusCaps};
use crate::metatrain::{pretrain_base, PretrainConfig};
use crate::model::{ModelConfig, Seq2Seq};

/// Counts matches by enumerating every n-gram position pair, clipping by
/// greedy one-to-one matching.
fn oracle_ngram_overlap(h: &[u8], r: &[u8], n: usize) -> usize {
    if h.len() < n || r.len() < n {
        return 0;
    }
    let mut used = vec![false; r.len() + 1 - n];
    let mut hits = 0;
    for i in 0..=h.len() - n {
        for j in 0..=r.len() - n {
            if !used[j] && h[i..i + n] == r[j..j + n] {
                used[j] = true;
                hits += 1;
                break;
            }
        }
    }
    hits
}

/// LCS by recursion with memoization on both suffix positions.
fn oracle_lcs(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

/// Brute-force LCS over every subsequence of the shorter input.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8], t: &[u8]| {
        let mut it = t.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<u8> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| short[i])
            .collect();
        if sub.len() > best && is_subseq(&sub, long) {
            best = sub.len();
        }
    }
    best
}

fn random_seq(rng: &mut impl Rng, max: usize) -> Vec<u8> {
    let len = rng.gen_range(0..=max);
    (0..len).map(|_| rng.gen_range(0..6)).collect()
}

#[test]
fn rouge_matches_independent_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let (h, r) = (random_seq(&mut rng, 30), random_seq(&mut rng, 30));
        for n in [1, 2] {
            let s = rouge_n(&h, &r, n).unwrap();
            let hits = oracle_ngram_overlap(&h, &r, n);
            let (hn, rn) = (h.len().saturating_sub(n - 1), r.len().saturating_sub(n - 1));
            let p = if h.len() >= n && r.len() >= n {
                hits as f64 / hn as f64
            } else {
                0.0
            };
            let rc = if h.len() >= n && r.len() >= n {
                hits as f64 / rn as f64
            } else {
                0.0
            };
            assert_eq!(s.precision, p);
            assert_eq!(s.recall, rc);
        }
        let l = rouge_l(&h, &r);
        let lcs = oracle_lcs(&h, &r);
        assert_eq!(lcs_len(&h, &r), lcs);
        if !h.is_empty() && !r.is_empty() {
            assert_eq!(l.precision, lcs as f64 / h.len() as f64);
            assert_eq!(l.recall, lcs as f64 / r.len() as f64);
        }
    }
}

#[test]
fn lcs_agrees_with_subsequence_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (a, b) = (random_seq(&mut rng, 10), random_seq(&mut rng, 12));
        assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
    }
}

proptest! {
    #[test]
    fn f1_is_symmetric_and_bounded(h in proptest::collection::vec(0u8..5, 0..20), r in proptest::collection::vec(0u8..5, 0..20)) {
        for n in [1, 2, 3] {
            let a = rouge_n(&h, &r, n).unwrap();
            let b = rouge_n(&r, &h, n).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert!((a.f1 - b.f1).abs() < 1e-15);
            for x in [a.precision, a.recall, a.f1] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }
        let l = rouge_l(&h, &r);
        prop_assert!((l.f1 - rouge_l(&r, &h).f1).abs() < 1e-15);
    }
}

fn corpus(n: usize) -> (Seq2Seq<f64>, Corpus) {
    let caps = CorpusCaps {
        max_examples: n,
        max_src_len: 64,
        max_tgt_len: 24,
    };
    let (vocab, mut cs) = corpora_from_raw(family_corpora(5, 1, n, 6), 1000, caps).unwrap();
    (Seq2Seq::new(ModelConfig::tiny(vocab.len()), 3).unwrap(), cs.remove(0))
}

#[test]
fn width_one_beam_equals_greedy() {
    let (model, c) = corpus(3);
    for e in &c.examples {
        let g = decode(&model, &e.article, &DecodeConfig::greedy(10)).unwrap();
        let cfg = DecodeConfig {
            beam_width: 1,
            max_len: 10,
            ..DecodeConfig::default()
        };
        assert_eq!(decode(&model, &e.article, &cfg).unwrap(), g);
    }
}

#[test]
fn beam_never_scores_below_greedy() {
    let (model, c) = corpus(4);
    for e in &c.examples {
        for lp in [0.0, 1.0, 2.0] {
            let cfg = DecodeConfig {
                beam_width: 3,
                max_len: 8,
                length_penalty: lp,
                ..DecodeConfig::default()
            };
            let beam = beam_search(&model, &e.article, &cfg).unwrap();
            let greedy = greedy(&model, &e.article, &cfg).unwrap();
            assert!(beam.score(lp) >= greedy.score(lp));
        }
    }
}

#[test]
fn output_ids_respect_contract() {
    let (model, c) = corpus(3);
    for e in &c.examples {
        let out = decode(
            &model,
            &e.article,
            &DecodeConfig {
                max_len: 12,
                ..DecodeConfig::default()
            },
        )
        .unwrap();
        assert!(out.len() <= 12);
        assert!(out.iter().all(|&id| id < model.config.vocab_size && id != PAD));
    }
    assert!(decode(
        &model,
        &c.examples[0].article,
        &DecodeConfig {
            beam_width: 0,
            ..DecodeConfig::default()
        }
    )
    .is_err());
}

#[test]
fn overfitted_model_reproduces_its_summary() {
    let (mut model, c) = corpus(1);
    let cfg = PretrainConfig {
        steps: 200,
        lr: 1e-2,
        batch_size: 1,
        seed: 0,
    };
    pretrain_base(&mut model, &c.examples, &cfg, &mut |_| Ok(())).unwrap();
    let e = &c.examples[0];
    for dc in [DecodeConfig::greedy(24), DecodeConfig::default()] {
        assert_eq!(decode(&model, &e.article, &dc).unwrap(), e.summary);
    }
    let eval = evaluate_corpus(&model, &c.examples, &DecodeConfig::greedy(24)).unwrap();
    assert_eq!((eval.mean.r1.f1, eval.mean.r2.f1, eval.mean.rl.f1), (1.0, 1.0, 1.0));
}

#[test]
fn evaluation_is_deterministic_and_averages() {
    let (model, c) = corpus(4);
    let cfg = DecodeConfig {
        max_len: 8,
        ..DecodeConfig::default()
    };
    let a = evaluate_corpus(&model, &c.examples, &cfg).unwrap();
    let b = evaluate_corpus(&model, &c.examples, &cfg).unwrap();
    assert_eq!(a.mean, b.mean);
    assert_eq!(a.hypotheses, b.hypotheses);
    let manual: f64 = a.scores.iter().map(|s| s.r1.f1).sum::<f64>() / 4.0;
    assert!((a.mean.r1.f1 - manual).abs() < 1e-15);
    assert!(evaluate_corpus(&model, &[], &cfg).is_err());
}
