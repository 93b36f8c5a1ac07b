use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Self-attention blocks per encoder transformer layer.
    pub enc_sa_per_tf: usize,
    /// Attention blocks per decoder transformer layer; the first is causal
    /// self-attention, the rest attend over the encoder memory.
    pub dec_sa_per_tf: usize,
    /// Adapter bottleneck width; 0 removes the adapters entirely.
    pub adapter_dim: usize,
    pub vocab_size: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub enc_dropout: f64,
    pub dec_dropout: f64,
    /// Adds a residual around the final feed-forward of each transformer layer.
    pub ff_residual: bool,
    pub ln_eps: f64,
    pub init_std: f64,
    pub adapter_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_size()
    }
}

impl ModelConfig {
    /// Full-size configuration: 768 hidden, 8 heads, 12 encoder and 6 decoder layers.
    pub fn full_size() -> Self {
        ModelConfig {
            hidden_dim: 768,
            num_heads: 8,
            ff_dim: 3072,
            enc_layers: 12,
            dec_layers: 6,
            enc_sa_per_tf: 1,
            dec_sa_per_tf: 2,
            adapter_dim: 64,
            vocab_size: 30_000,
            max_src_len: 512,
            max_tgt_len: 128,
            enc_dropout: 0.1,
            dec_dropout: 0.2,
            ff_residual: false,
            ln_eps: 1e-5,
            init_std: 0.02,
            adapter_init_std: 1e-3,
        }
    }

    /// Desk-scale configuration for tests and demos. Dropout is off.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            hidden_dim: 16,
            num_heads: 2,
            ff_dim: 32,
            enc_layers: 2,
            dec_layers: 1,
            adapter_dim: 4,
            vocab_size,
            max_src_len: 64,
            max_tgt_len: 24,
            enc_dropout: 0.0,
            dec_dropout: 0.0,
            init_std: 0.1,
            ..Self::full_size()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads.max(1)
    }

    /// Number of adapters (and of layer norms) in the whole model.
    pub fn adapter_sites(&self) -> usize {
        self.enc_layers * (self.enc_sa_per_tf + 1) + self.dec_layers * (self.dec_sa_per_tf + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.hidden_dim == 0 || self.num_heads == 0 {
            problems.push("hidden_dim and num_heads must be positive".to_string());
        } else if self.hidden_dim % self.num_heads != 0 {
            problems.push(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.adapter_dim >= self.hidden_dim {
            problems.push(format!(
                "adapter_dim {} must be smaller than hidden_dim {}",
                self.adapter_dim, self.hidden_dim
            ));
        }
        if self.ff_dim == 0 || self.vocab_size == 0 {
            problems.push("ff_dim and vocab_size must be positive".to_string());
        }
        if self.enc_sa_per_tf < 1 {
            problems.push("enc_sa_per_tf must be at least 1".to_string());
        }
        if self.dec_sa_per_tf < 2 {
            problems.push("dec_sa_per_tf must be at least 2 (self + cross attention)".to_string());
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            problems.push("max_src_len and max_tgt_len must be at least 2".to_string());
        }
        for (name, rate) in [("enc_dropout", self.enc_dropout), ("dec_dropout", self.dec_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                problems.push(format!("{name} {rate} outside [0, 1)"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
