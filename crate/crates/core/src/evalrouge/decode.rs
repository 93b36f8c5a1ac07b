use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rouge::RougeTriple;
use crate::autodiff::Graph;
use crate::data::vocab::{BOS, EOS, PAD};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{Batch, Forward, Seq2Seq};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Upper bound on generated tokens; also capped by the model's target length.
    pub max_len: usize,
    pub length_penalty: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Beam,
            beam_width: 4,
            max_len: 128,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            beam_width: 1,
            max_len,
            length_penalty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.beam_width == 0 {
            problems.push("beam_width must be at least 1");
        }
        if self.max_len == 0 {
            problems.push("max_len must be at least 1");
        }
        if !self.length_penalty.is_finite() {
            problems.push("length_penalty must be finite");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// A partial or complete output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, without `[BOS]` and `[EOS]`.
    pub tokens: Vec<usize>,
    /// Summed log-probability, including `[EOS]` when finished.
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Log-probability divided by `length^penalty`, counting `[EOS]` when present.
    pub fn score(&self, length_penalty: f64) -> f64 {
        let len = self.tokens.len() + usize::from(self.finished);
        if len == 0 {
            self.logprob
        } else {
            self.logprob / (len as f64).powf(length_penalty)
        }
    }
}

/// Encoder output for one source, reused by every decoding step.
struct Session<'a, T> {
    model: &'a Seq2Seq<T>,
    memory: Tensor<T>,
    src_valid: Vec<bool>,
}

impl<'a, T: Scalar> Session<'a, T> {
    fn new(model: &'a Seq2Seq<T>, src: &[usize]) -> Result<Self> {
        let ex = Example {
            article: src.to_vec(),
            summary: vec![EOS],
            source_corpus: "".into(),
            index: 0,
        };
        let batch = Batch::new(&[&ex], model.config.max_src_len, model.config.max_tgt_len)?;
        let mut g = Graph::no_grad();
        let b = model.bind(&mut g, &BTreeMap::new())?;
        let mem = model.encode(&mut g, &b, &batch, Forward::default())?;
        Ok(Session {
            model,
            memory: g.value(mem).clone(),
            src_valid: batch.src_valid,
        })
    }

    /// Next-token log-probabilities for equal-length prefixes (each starting with `[BOS]`).
    fn next_logprobs(&self, prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let n = prefixes.len();
        let t = prefixes[0].len();
        let mut g = Graph::no_grad();
        let b = self.model.bind(&mut g, &BTreeMap::new())?;
        let s = self.src_valid.len();
        let d = self.model.config.hidden_dim;
        let mut mem = Vec::with_capacity(n * s * d);
        let mut valid = Vec::with_capacity(n * s);
        for _ in 0..n {
            mem.extend_from_slice(self.memory.data());
            valid.extend_from_slice(&self.src_valid);
        }
        let mem = g.constant(Tensor::new(vec![n, s, d], mem)?)?;
        let ids: Vec<usize> = prefixes.iter().flatten().copied().collect();
        let logits = self
            .model
            .decode_logits(&mut g, &b, mem, &valid, &ids, Forward::default())?;
        let v = self.model.config.vocab_size;
        let logits = g.value(logits);
        let mut last = Vec::with_capacity(n * v);
        for i in 0..n {
            let row = (i * t + t - 1) * v;
            last.extend_from_slice(&logits.data()[row..row + v]);
        }
        let lp = Tensor::new(vec![n, v], last)?.log_softmax_last()?;
        Ok(lp
            .data()
            .chunks(v)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(id, x)| {
                        if id == PAD || id == BOS {
                            f64::NEG_INFINITY
                        } else {
                            x.as_f64()
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

fn effective_max_len<T>(model: &Seq2Seq<T>, cfg: &DecodeConfig) -> usize {
    cfg.max_len.min(model.config.max_tgt_len)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy<T: Scalar>(model: &Seq2Seq<T>, src: &[usize], cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let session = Session::new(model, src)?;
    greedy_in(&session, effective_max_len(model, cfg))
}

fn greedy_in<T: Scalar>(session: &Session<'_, T>, max_len: usize) -> Result<Hypothesis> {
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    };
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let lp = &session.next_logprobs(std::slice::from_ref(&prefix))?[0];
        let id = argmax(lp);
        hyp.logprob += lp[id];
        if id == EOS {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push(id);
        prefix.push(id);
    }
    Ok(hyp)
}

/// Beam search; the greedy completion is always among the candidates, so the
/// result never scores below greedy decoding.
pub fn beam_search<T: Scalar>(model: &Seq2Seq<T>, src: &[usize], cfg: &DecodeConfig) -> Result<Hypothesis> {
    cfg.validate()?;
    let session = Session::new(model, src)?;
    let max_len = effective_max_len(model, cfg);
    let width = cfg.beam_width;
    let lp_pen = cfg.length_penalty;

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let prefixes: Vec<Vec<usize>> = live
            .iter()
            .map(|h| std::iter::once(BOS).chain(h.tokens.iter().copied()).collect())
            .collect();
        let lps = session.next_logprobs(&prefixes)?;
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (i, (h, row)) in live.iter().zip(&lps).enumerate() {
            for (id, &lp) in row.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                // Extensions all have the same length, whether or not they end in [EOS].
                let logprob = h.logprob + lp;
                let score = logprob / ((h.tokens.len() + 1) as f64).powf(lp_pen);
                cands.push((score, i, id, logprob));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(width);
        for &(_, i, id, logprob) in cands.iter().take(width) {
            let mut tokens = live[i].tokens.clone();
            if id == EOS {
                done.push(Hypothesis {
                    tokens,
                    logprob,
                    finished: true,
                });
            } else {
                tokens.push(id);
                next.push(Hypothesis {
                    tokens,
                    logprob,
                    finished: false,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live);
    if width > 1 {
        done.push(greedy_in(&session, max_len)?);
    }
    let mut best = done.swap_remove(0);
    for h in done {
        if h.score(lp_pen) > best.score(lp_pen) {
            best = h;
        }
    }
    Ok(best)
}

/// Generated summary ids for `src`.
pub fn decode<T: Scalar>(model: &Seq2Seq<T>, src: &[usize], cfg: &DecodeConfig) -> Result<Vec<usize>> {
    let h = match cfg.strategy {
        Strategy::Greedy => greedy(model, src, cfg)?,
        Strategy::Beam => beam_search(model, src, cfg)?,
    };
    Ok(h.tokens)
}

/// Per-example scores and their mean.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub hypotheses: Vec<Vec<usize>>,
    pub scores: Vec<RougeTriple>,
    pub mean: RougeTriple,
}

/// Decodes every example and scores it against its reference summary.
pub fn evaluate_corpus<T: Scalar>(model: &Seq2Seq<T>, examples: &[Example], cfg: &DecodeConfig) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    cfg.validate()?;
    let hypotheses = examples
        .par_iter()
        .map(|e| decode(model, &e.article, cfg))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<RougeTriple> = hypotheses
        .iter()
        .zip(examples)
        .map(|(h, e)| RougeTriple::score(h, &e.summary))
        .collect();
    let mean = RougeTriple::mean(&scores);
    Ok(Evaluation {
        hypotheses,
        scores,
        mean,
    })
}
