use crate::data::vocab::{BOS, EOS, PAD};
use crate::data::Example;
use crate::error::{Error, Result};

/// Padded, teacher-forced batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    /// `[size, src_len]` article ids, padded with `[PAD]`.
    pub src: Vec<usize>,
    pub src_valid: Vec<bool>,
    pub tgt_len: usize,
    /// `[BOS] y_1 .. y_n`, padded.
    pub tgt_in: Vec<usize>,
    /// `y_1 .. y_n [EOS]`, padded.
    pub tgt_out: Vec<usize>,
    /// 1 for real target positions, 0 for padding.
    pub tgt_mask: Vec<bool>,
    /// Number of predicted tokens.
    pub tokens: usize,
}

impl Batch {
    /// Builds a batch; sequences longer than the limits are truncated.
    pub fn new(examples: &[&Example], max_src_len: usize, max_tgt_len: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let src_len = examples
            .iter()
            .map(|e| e.article.len().min(max_src_len))
            .max()
            .unwrap_or(0);
        if src_len == 0 {
            return Err(Error::Invalid("empty source sequence".into()));
        }
        let tgt_len = examples
            .iter()
            .map(|e| (e.summary.len() + 1).min(max_tgt_len))
            .max()
            .unwrap_or(0);
        if examples.iter().any(|e| e.summary.is_empty()) {
            return Err(Error::EmptyTarget);
        }
        let size = examples.len();
        let mut b = Batch {
            size,
            src_len,
            src: vec![PAD; size * src_len],
            src_valid: vec![false; size * src_len],
            tgt_len,
            tgt_in: vec![PAD; size * tgt_len],
            tgt_out: vec![PAD; size * tgt_len],
            tgt_mask: vec![false; size * tgt_len],
            tokens: 0,
        };
        for (i, e) in examples.iter().enumerate() {
            for (j, &t) in e.article.iter().take(src_len).enumerate() {
                b.src[i * src_len + j] = t;
                b.src_valid[i * src_len + j] = true;
            }
            let keep = e.summary.len().min(tgt_len - 1);
            let mut dec_in = vec![BOS];
            dec_in.extend_from_slice(&e.summary[..keep]);
            let mut dec_out = e.summary[..keep].to_vec();
            dec_out.push(EOS);
            for j in 0..dec_in.len() {
                b.tgt_in[i * tgt_len + j] = dec_in[j];
                b.tgt_out[i * tgt_len + j] = dec_out[j];
                b.tgt_mask[i * tgt_len + j] = true;
            }
            b.tokens += dec_in.len();
        }
        Ok(b)
    }

    pub fn from_examples(examples: &[Example], max_src_len: usize, max_tgt_len: usize) -> Result<Self> {
        let refs: Vec<&Example> = examples.iter().collect();
        Self::new(&refs, max_src_len, max_tgt_len)
    }
}
