use super::config::ModelConfig;
use super::params::TrainableMode;

/// Closed-form number of trainable parameters in `mode`.
///
/// Each transformer layer with `l` attention blocks holds `l + 1` adapters and
/// `l + 1` layer norms. With `adapter_dim == 0` the adapters are absent.
pub fn trainable_parameter_count(cfg: &ModelConfig, mode: TrainableMode) -> usize {
    let (d, a, f, v) = (cfg.hidden_dim, cfg.adapter_dim, cfg.ff_dim, cfg.vocab_size);
    let sites = cfg.adapter_sites();
    let adapter = if a == 0 { 0 } else { 2 * d * a + a + d };
    let meta = sites * (adapter + 2 * d);
    match mode {
        TrainableMode::AdapterOnly => meta,
        TrainableMode::Full => {
            let attention = 4 * (d * d + d);
            let ff = 2 * d * f + f + d;
            let blocks = cfg.enc_layers * cfg.enc_sa_per_tf + cfg.dec_layers * cfg.dec_sa_per_tf;
            let layers = cfg.enc_layers + cfg.dec_layers;
            let embeddings = (v + cfg.max_src_len + cfg.max_tgt_len) * d;
            let output = d * v + v;
            meta + blocks * (attention + ff) + layers * ff + embeddings + output
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{layout, Group};

    fn enumerate(cfg: &ModelConfig, mode: TrainableMode) -> usize {
        layout(cfg)
            .iter()
            .filter(|s| mode.includes(s.group))
            .map(|s| s.numel())
            .sum()
    }

    #[test]
    fn full_size_configuration_adapter_only() {
        let cfg = ModelConfig::full_size();
        let n = trainable_parameter_count(&cfg, TrainableMode::AdapterOnly);
        assert_eq!(n, 42 * (2 * 768 * 64 + 64 + 768) + 42 * 2 * 768);
        assert_eq!(n, 4_228_224);
        assert!((n as f64 - 4.23e6).abs() / 4.23e6 < 1e-3);
        assert_eq!(n, enumerate(&cfg, TrainableMode::AdapterOnly));
        assert_eq!(cfg.adapter_sites(), 42);
    }

    #[test]
    fn zero_adapter_dim_counts_layer_norms_only() {
        let cfg = ModelConfig {
            adapter_dim: 0,
            ..ModelConfig::full_size()
        };
        let n = trainable_parameter_count(&cfg, TrainableMode::AdapterOnly);
        assert_eq!(n, 42 * 2 * 768);
        assert_eq!(n, enumerate(&cfg, TrainableMode::AdapterOnly));
    }

    #[test]
    fn tiny_configuration_matches_enumeration() {
        let cfg = ModelConfig {
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 16,
            adapter_dim: 2,
            enc_layers: 2,
            dec_layers: 1,
            ..ModelConfig::tiny(50)
        };
        for mode in [TrainableMode::AdapterOnly, TrainableMode::Full] {
            assert_eq!(trainable_parameter_count(&cfg, mode), enumerate(&cfg, mode));
        }
        // enc: 2 layers x 2 sites, dec: 1 layer x 3 sites
        let adapters = layout(&cfg).iter().filter(|s| s.name.ends_with("adapter.up_w")).count();
        assert_eq!(adapters, 7);
        assert!(layout(&cfg)
            .iter()
            .filter(|s| s.group == Group::Meta)
            .all(|s| s.name.contains(".adapter.") || s.name.contains(".ln.")));
    }

    #[test]
    fn full_count_is_superset() {
        let cfg = ModelConfig::full_size();
        assert_eq!(
            trainable_parameter_count(&cfg, TrainableMode::Full),
            enumerate(&cfg, TrainableMode::Full)
        );
    }
}
