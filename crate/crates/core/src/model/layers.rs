//! Attention, feed-forward, adapter and the self-attention / transformer layer
//! compositions, with and without adapters.

use std::collections::HashMap;

use super::config::ModelConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Model parameters placed on a graph, looked up by name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("parameter {name} not bound")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

/// Per-call switches shared by every layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerCtx<'a> {
    pub cfg: &'a ModelConfig,
    /// Route through the adapters; off reproduces the unadapted base model.
    pub adapters: bool,
    pub dropout: f64,
}

/// Which side of the encoder-decoder a transformer layer sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// Additive attention masks, `[batch, queries, keys]`, 0 or a large negative value.
#[derive(Debug, Clone, Copy, Default)]
pub struct Masks {
    pub self_mask: Option<Var>,
    pub cross_mask: Option<Var>,
}

pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    cfg: &ModelConfig,
    query: Var,
    keys: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let (qs, ks) = (g.shape(query).to_vec(), g.shape(keys).to_vec());
    if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != cfg.hidden_dim || ks[2] != cfg.hidden_dim {
        return Err(Error::shape(
            "attention",
            format!("query {qs:?}, keys {ks:?}, hidden {}", cfg.hidden_dim),
        ));
    }
    let (batch, sq, sk) = (qs[0], qs[1], ks[1]);
    let (h, dh) = (cfg.num_heads, cfg.head_dim());

    // [batch, seq, hidden] -> [heads, batch, seq, head_dim]
    let heads = |g: &mut Graph<T>, x: Var, w: &str, bias: &str, len: usize| -> Result<Var> {
        let y = g.linear(
            x,
            b.get(&format!("{prefix}.attn.{w}"))?,
            b.get(&format!("{prefix}.attn.{bias}"))?,
        )?;
        let y = g.reshape(y, &[batch, len, h, dh])?;
        g.permute(y, &[2, 0, 1, 3])
    };
    let q = heads(g, query, "wq", "bq", sq)?;
    let k = heads(g, keys, "wk", "bk", sk)?;
    let v = heads(g, keys, "wv", "bv", sk)?;

    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::one() / T::from_usize(dh).unwrap().sqrt())?;
    let scores = match mask {
        Some(m) => g.add(scores, m)?,
        None => scores,
    };
    let attn = g.softmax(scores)?;
    let ctx = g.matmul(attn, v)?;
    let ctx = g.permute(ctx, &[1, 2, 0, 3])?;
    let ctx = g.reshape(ctx, &[batch, sq, cfg.hidden_dim])?;
    g.linear(
        ctx,
        b.get(&format!("{prefix}.attn.wo"))?,
        b.get(&format!("{prefix}.attn.bo"))?,
    )
}

/// Position-wise `W2 gelu(W1 x + b1) + b2`.
pub fn feed_forward<T: Scalar>(g: &mut Graph<T>, b: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let hdn = g.linear(
        x,
        b.get(&format!("{prefix}.ff.w1"))?,
        b.get(&format!("{prefix}.ff.b1"))?,
    )?;
    let hdn = g.gelu(hdn)?;
    g.linear(
        hdn,
        b.get(&format!("{prefix}.ff.w2"))?,
        b.get(&format!("{prefix}.ff.b2"))?,
    )
}

/// Bottleneck adapter with skip connection: `up(relu(down(h))) + h`.
pub fn adapter<T: Scalar>(g: &mut Graph<T>, b: &Bound, prefix: &str, h: Var) -> Result<Var> {
    let p = format!("{prefix}.adapter");
    let down = g.linear(h, b.get(&format!("{p}.down_w"))?, b.get(&format!("{p}.down_b"))?)?;
    let act = g.relu(down)?;
    let up = g.linear(act, b.get(&format!("{p}.up_w"))?, b.get(&format!("{p}.up_b"))?)?;
    g.add(up, h)
}

fn maybe_adapter<T: Scalar>(g: &mut Graph<T>, b: &Bound, ctx: LayerCtx<'_>, prefix: &str, h: Var) -> Result<Var> {
    if ctx.adapters && ctx.cfg.adapter_dim > 0 {
        adapter(g, b, prefix, h)
    } else {
        Ok(h)
    }
}

fn norm<T: Scalar>(g: &mut Graph<T>, b: &Bound, ctx: LayerCtx<'_>, prefix: &str, x: Var) -> Result<Var> {
    g.layer_norm_affine(
        x,
        b.get(&format!("{prefix}.ln.gamma"))?,
        b.get(&format!("{prefix}.ln.beta"))?,
        T::lit(ctx.cfg.ln_eps),
    )
}

/// `LN(FF(MHA(h)) + h)`, or `LN(ADA(FF(MHA(h)) + h))` when adapters are on.
///
/// With `memory`, keys and values come from it (cross-attention).
pub fn self_attention_layer<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    ctx: LayerCtx<'_>,
    prefix: &str,
    h: Var,
    memory: Option<Var>,
    mask: Option<Var>,
) -> Result<Var> {
    let keys = memory.unwrap_or(h);
    let a = multi_head_attention(g, b, prefix, ctx.cfg, h, keys, mask)?;
    let f = feed_forward(g, b, prefix, a)?;
    let f = g.dropout(f, ctx.dropout)?;
    let s = g.add(f, h)?;
    let s = maybe_adapter(g, b, ctx, prefix, s)?;
    norm(g, b, ctx, prefix, s)
}

/// `LN(FF(SA_{1:l}(h)))`, or `LN(ADA(FF(ADA-SA_{1:l}(h))))` when adapters are on.
///
/// On the decoder side the first block is causal self-attention and the
/// remaining blocks attend over `memory`.
#[allow(clippy::too_many_arguments)]
pub fn transformer_layer<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    ctx: LayerCtx<'_>,
    prefix: &str,
    side: Side,
    h: Var,
    memory: Option<Var>,
    masks: Masks,
    l: usize,
) -> Result<Var> {
    if l == 0 {
        return Err(Error::Invalid("transformer layer needs l >= 1".into()));
    }
    let mut x = h;
    for j in 0..l {
        let p = format!("{prefix}.sa{j}");
        x = if side == Side::Decoder && j > 0 {
            let mem = memory
                .ok_or_else(|| Error::Invalid(format!("{prefix}: decoder layer with l={l} needs encoder memory")))?;
            self_attention_layer(g, b, ctx, &p, x, Some(mem), masks.cross_mask)?
        } else {
            self_attention_layer(g, b, ctx, &p, x, None, masks.self_mask)?
        };
    }
    let f = feed_forward(g, b, prefix, x)?;
    let f = g.dropout(f, ctx.dropout)?;
    let f = if ctx.cfg.ff_residual { g.add(f, x)? } else { f };
    let f = maybe_adapter(g, b, ctx, prefix, f)?;
    norm(g, b, ctx, prefix, f)
}
