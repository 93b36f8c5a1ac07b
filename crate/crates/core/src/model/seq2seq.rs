use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::config::ModelConfig;
use super::layers::{transformer_layer, Bound, LayerCtx, Masks, Side};
use super::params::ParameterStore;
use crate::autodiff::{Graph, Var};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Additive mask value for disallowed attention; finite so every tensor stays finite.
const MASKED: f64 = -1e9;

/// Forward-pass switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Forward {
    pub adapters: bool,
}

impl Default for Forward {
    fn default() -> Self {
        Forward { adapters: true }
    }
}

impl Forward {
    pub fn base() -> Self {
        Forward { adapters: false }
    }
}

/// Summed negative log-likelihood and the number of predicted tokens.
#[derive(Debug, Clone, Copy)]
pub struct Nll {
    pub loss: Var,
    pub tokens: usize,
}

/// The adapter-augmented transformer encoder-decoder.
#[derive(Debug, Clone)]
pub struct Seq2Seq<T> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParameterStore::init(&config, &mut rng);
        Ok(Seq2Seq { config, params })
    }

    /// Binds every parameter as a constant, except those in `overrides`.
    pub fn bind(&self, g: &mut Graph<T>, overrides: &BTreeMap<String, Var>) -> Result<Bound> {
        let mut b = Bound::new();
        for (name, p) in self.params.iter() {
            let v = match overrides.get(name) {
                Some(&v) => v,
                None => g.constant_arc(p.value.clone())?,
            };
            b.insert(name.clone(), v);
        }
        Ok(b)
    }

    /// Binds `names` as differentiable leaves and the rest as constants.
    pub fn bind_trainable(&self, g: &mut Graph<T>, names: &[String]) -> Result<(Bound, Vec<Var>)> {
        let mut leaves = BTreeMap::new();
        let mut vars = Vec::with_capacity(names.len());
        for n in names {
            let p = self
                .params
                .get(n)
                .ok_or_else(|| Error::Invalid(format!("unknown parameter {n}")))?;
            let v = g.leaf_arc(p.value.clone())?;
            leaves.insert(n.clone(), v);
            vars.push(v);
        }
        Ok((self.bind(g, &leaves)?, vars))
    }

    fn ctx(&self, dropout: f64, fwd: Forward) -> LayerCtx<'_> {
        LayerCtx {
            cfg: &self.config,
            adapters: fwd.adapters,
            dropout,
        }
    }

    fn embed(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        ids: &[usize],
        shape: [usize; 2],
        pos_table: &str,
        dropout: f64,
    ) -> Result<Var> {
        let tok = g.embedding(b.get("embed.token")?, ids, &shape)?;
        let pos = g.slice(b.get(pos_table)?, 0, 0, shape[1])?;
        let x = g.add(tok, pos)?;
        g.dropout(x, dropout)
    }

    fn key_mask(&self, g: &mut Graph<T>, valid: &[bool], batch: usize, queries: usize, causal: bool) -> Result<Var> {
        let keys = valid.len() / batch;
        let mut m = Vec::with_capacity(batch * queries * keys);
        for bi in 0..batch {
            for q in 0..queries {
                for k in 0..keys {
                    let ok = valid[bi * keys + k] && (!causal || k <= q);
                    m.push(if ok { T::zero() } else { T::lit(MASKED) });
                }
            }
        }
        g.constant(Tensor::new(vec![batch, queries, keys], m)?)
    }

    /// Encoder memory `[batch, src_len, hidden]`.
    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, batch: &Batch, fwd: Forward) -> Result<Var> {
        let cfg = &self.config;
        let (n, s) = (batch.size, batch.src_len);
        if s > cfg.max_src_len {
            return Err(Error::Invalid(format!("source length {s} exceeds {}", cfg.max_src_len)));
        }
        let ctx = self.ctx(cfg.enc_dropout, fwd);
        let mut h = self.embed(g, b, &batch.src, [n, s], "embed.pos_src", cfg.enc_dropout)?;
        let masks = Masks {
            self_mask: Some(self.key_mask(g, &batch.src_valid, n, s, false)?),
            cross_mask: None,
        };
        for i in 0..cfg.enc_layers {
            h = transformer_layer(
                g,
                b,
                ctx,
                &format!("enc.{i}"),
                Side::Encoder,
                h,
                None,
                masks,
                cfg.enc_sa_per_tf,
            )?;
        }
        Ok(h)
    }

    /// Decoder logits `[batch, tgt_len, vocab]` for teacher-forced inputs `tgt_in`.
    pub fn decode_logits(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        memory: Var,
        src_valid: &[bool],
        tgt_in: &[usize],
        fwd: Forward,
    ) -> Result<Var> {
        let cfg = &self.config;
        let n = g.shape(memory)[0];
        if tgt_in.is_empty() || tgt_in.len() % n != 0 {
            return Err(Error::EmptyTarget);
        }
        let t = tgt_in.len() / n;
        if t > cfg.max_tgt_len {
            return Err(Error::Invalid(format!("target length {t} exceeds {}", cfg.max_tgt_len)));
        }
        let ctx = self.ctx(cfg.dec_dropout, fwd);
        let mut h = self.embed(g, b, tgt_in, [n, t], "embed.pos_tgt", cfg.dec_dropout)?;
        let all = vec![true; n * t];
        let masks = Masks {
            self_mask: Some(self.key_mask(g, &all, n, t, true)?),
            cross_mask: Some(self.key_mask(g, src_valid, n, t, false)?),
        };
        for i in 0..cfg.dec_layers {
            h = transformer_layer(
                g,
                b,
                ctx,
                &format!("dec.{i}"),
                Side::Decoder,
                h,
                Some(memory),
                masks,
                cfg.dec_sa_per_tf,
            )?;
        }
        g.linear(h, b.get("out.w")?, b.get("out.b")?)
    }

    /// Summed token NLL of the batch targets given the articles.
    pub fn nll(&self, g: &mut Graph<T>, b: &Bound, batch: &Batch, fwd: Forward) -> Result<Nll> {
        let memory = self.encode(g, b, batch, fwd)?;
        let logits = self.decode_logits(g, b, memory, &batch.src_valid, &batch.tgt_in, fwd)?;
        let v = self.config.vocab_size;
        let flat = g.reshape(logits, &[batch.size * batch.tgt_len, v])?;
        let weights: Vec<T> = batch
            .tgt_mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        let loss = g.cross_entropy(flat, &batch.tgt_out, &weights)?;
        Ok(Nll {
            loss,
            tokens: batch.tokens,
        })
    }

    /// Per-token NLL of `examples` under the current parameters, without gradients.
    pub fn evaluate_nll(&self, examples: &[Example], fwd: Forward) -> Result<f64> {
        let batch = Batch::from_examples(examples, self.config.max_src_len, self.config.max_tgt_len)?;
        let mut g = Graph::no_grad();
        let b = self.bind(&mut g, &BTreeMap::new())?;
        let out = self.nll(&mut g, &b, &batch, fwd)?;
        Ok(g.value(out.loss).item().as_f64() / out.tokens as f64)
    }

    /// Mean-pooled encoder output over non-pad positions, one vector per example.
    pub fn document_embeddings(&self, examples: &[&Example]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(16) {
            let batch = Batch::new(chunk, self.config.max_src_len, self.config.max_tgt_len)?;
            let mut g = Graph::no_grad();
            let b = self.bind(&mut g, &BTreeMap::new())?;
            let mem = self.encode(&mut g, &b, &batch, Forward::default())?;
            let mem = g.value(mem);
            let d = self.config.hidden_dim;
            for i in 0..batch.size {
                out.push(mean_pool(
                    &mem.data()[i * batch.src_len * d..(i + 1) * batch.src_len * d],
                    &batch.src_valid[i * batch.src_len..(i + 1) * batch.src_len],
                    d,
                ));
            }
        }
        Ok(out)
    }
}

/// Average of the rows of a `[len, dim]` matrix whose `valid` flag is set.
pub fn mean_pool<T: Scalar>(rows: &[T], valid: &[bool], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for (row, &ok) in rows.chunks(dim).zip(valid) {
        if ok {
            n += 1;
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x.as_f64();
            }
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}
