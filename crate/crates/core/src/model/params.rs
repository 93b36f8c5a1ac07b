use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named tensors in a deterministic (sorted) order.
pub type TensorMap<T> = BTreeMap<String, Tensor<T>>;

/// Which half of the parameter partition a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Frozen base model (embeddings, attention, feed-forward, output projection).
    Base,
    /// Meta-trainable adapters and layer-norm affines.
    Meta,
}

impl Group {
    pub fn tag(self) -> u8 {
        match self {
            Group::Base => 0,
            Group::Meta => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Group::Base),
            1 => Some(Group::Meta),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Which parameters an optimizer is allowed to touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainableMode {
    /// Adapters and layer norms only.
    AdapterOnly,
    /// Every parameter.
    Full,
}

impl TrainableMode {
    pub fn includes(self, group: Group) -> bool {
        match self {
            TrainableMode::AdapterOnly => group == Group::Meta,
            TrainableMode::Full => true,
        }
    }
}

impl std::str::FromStr for TrainableMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapter-only" | "adapter_only" | "adapters" => Ok(TrainableMode::AdapterOnly),
            "full" => Ok(TrainableMode::Full),
            other => Err(Error::Config(format!("unknown trainable mode {other:?}"))),
        }
    }
}

struct LayoutBuilder<'a> {
    cfg: &'a ModelConfig,
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, group: Group, init: Init) {
        self.specs.push(ParamSpec {
            name,
            shape,
            group,
            init,
        });
    }

    fn attention(&mut self, p: &str) {
        let (d, std) = (self.cfg.hidden_dim, self.cfg.init_std);
        for m in ["q", "k", "v", "o"] {
            self.push(format!("{p}.attn.w{m}"), vec![d, d], Group::Base, Init::Normal(std));
            self.push(format!("{p}.attn.b{m}"), vec![d], Group::Base, Init::Zeros);
        }
    }

    fn feed_forward(&mut self, p: &str) {
        let (d, f, std) = (self.cfg.hidden_dim, self.cfg.ff_dim, self.cfg.init_std);
        self.push(format!("{p}.ff.w1"), vec![d, f], Group::Base, Init::Normal(std));
        self.push(format!("{p}.ff.b1"), vec![f], Group::Base, Init::Zeros);
        self.push(format!("{p}.ff.w2"), vec![f, d], Group::Base, Init::Normal(std));
        self.push(format!("{p}.ff.b2"), vec![d], Group::Base, Init::Zeros);
    }

    fn adapter_and_norm(&mut self, p: &str) {
        let (d, a) = (self.cfg.hidden_dim, self.cfg.adapter_dim);
        if a > 0 {
            let std = self.cfg.adapter_init_std;
            self.push(
                format!("{p}.adapter.down_w"),
                vec![d, a],
                Group::Meta,
                Init::Normal(std),
            );
            self.push(format!("{p}.adapter.down_b"), vec![a], Group::Meta, Init::Zeros);
            self.push(format!("{p}.adapter.up_w"), vec![a, d], Group::Meta, Init::Zeros);
            self.push(format!("{p}.adapter.up_b"), vec![d], Group::Meta, Init::Zeros);
        }
        self.push(format!("{p}.ln.gamma"), vec![d], Group::Meta, Init::Ones);
        self.push(format!("{p}.ln.beta"), vec![d], Group::Meta, Init::Zeros);
    }

    fn stack(&mut self, side: &str, layers: usize, sa_per_tf: usize) {
        for i in 0..layers {
            for j in 0..sa_per_tf {
                let p = format!("{side}.{i}.sa{j}");
                self.attention(&p);
                self.feed_forward(&p);
                self.adapter_and_norm(&p);
            }
            let p = format!("{side}.{i}");
            self.feed_forward(&p);
            self.adapter_and_norm(&p);
        }
    }
}

/// Every parameter the model owns, without allocating any of them.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = LayoutBuilder { cfg, specs: Vec::new() };
    let (d, v, std) = (cfg.hidden_dim, cfg.vocab_size, cfg.init_std);
    b.push("embed.token".into(), vec![v, d], Group::Base, Init::Normal(std));
    b.push(
        "embed.pos_src".into(),
        vec![cfg.max_src_len, d],
        Group::Base,
        Init::Normal(std),
    );
    b.push(
        "embed.pos_tgt".into(),
        vec![cfg.max_tgt_len, d],
        Group::Base,
        Init::Normal(std),
    );
    b.stack("enc", cfg.enc_layers, cfg.enc_sa_per_tf);
    b.stack("dec", cfg.dec_layers, cfg.dec_sa_per_tf);
    b.push("out.w".into(), vec![d, v], Group::Base, Init::Normal(std));
    b.push("out.b".into(), vec![v], Group::Base, Init::Zeros);
    b.specs
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Arc<Tensor<T>>,
    pub group: Group,
}

/// All model parameters, partitioned into the frozen base set and the meta set.
#[derive(Debug, Clone)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let params = layout(cfg)
            .into_iter()
            .map(|spec| {
                let value = match spec.init {
                    Init::Normal(std) => Tensor::randn(&spec.shape, std, rng),
                    Init::Zeros => Tensor::zeros(&spec.shape),
                    Init::Ones => Tensor::ones(&spec.shape),
                };
                (
                    spec.name,
                    Param {
                        value: Arc::new(value),
                        group: spec.group,
                    },
                )
            })
            .collect();
        ParameterStore { params }
    }

    pub fn from_parts(parts: impl IntoIterator<Item = (String, Group, Tensor<T>)>) -> Self {
        let params = parts
            .into_iter()
            .map(|(name, group, t)| {
                (
                    name,
                    Param {
                        value: Arc::new(t),
                        group,
                    },
                )
            })
            .collect();
        ParameterStore { params }
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| p.value.as_ref())
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self, mode: TrainableMode) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| mode.includes(p.group))
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn names_in(&self, group: Group) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.group == group)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn count(&self, mode: TrainableMode) -> usize {
        self.params
            .values()
            .filter(|p| mode.includes(p.group))
            .map(|p| p.value.len())
            .sum()
    }

    /// Copies of the tensors an optimizer in `mode` would update.
    pub fn snapshot(&self, mode: TrainableMode) -> TensorMap<T> {
        self.params
            .iter()
            .filter(|(_, p)| mode.includes(p.group))
            .map(|(n, p)| (n.clone(), (*p.value).clone()))
            .collect()
    }

    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape(
                "set_param",
                format!("{name}: {:?} vs {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn set_many(&mut self, values: &TensorMap<T>) -> Result<()> {
        for (name, t) in values {
            self.set(name, t.clone())?;
        }
        Ok(())
    }

    /// Resets adapters to their identity initialization (layer norms untouched).
    pub fn reset_adapters<R: Rng + ?Sized>(&mut self, cfg: &ModelConfig, rng: &mut R) {
        for spec in layout(cfg) {
            if !spec.name.contains(".adapter.") {
                continue;
            }
            let value = match spec.init {
                Init::Normal(std) => Tensor::randn(&spec.shape, std, rng),
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
            };
            if let Some(p) = self.params.get_mut(&spec.name) {
                p.value = Arc::new(value);
            }
        }
    }
}
