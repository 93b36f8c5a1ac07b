//! Binary checkpoint archive.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "MSUMCKPT" | version u32 | dtype u8 | meta_len u64 | meta JSON
//! count u64 | count x (name_len u32 | name | kind u8 | rank u32 | dims u64.. | data)
//! ```
//!
//! Tensors are written sorted by name, and the JSON metadata has sorted keys,
//! so equal contents always give equal bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{Group, ParameterStore, TensorMap};
use super::seq2seq::Seq2Seq;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MSUMCKPT";
pub const FORMAT_VERSION: u32 = 1;
/// Kind tag for auxiliary (non-parameter) tensors such as optimizer moments.
const STATE_KIND: u8 = 0xff;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

/// Model parameters plus optional training state.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
    /// Free-form metadata such as the step counter.
    pub extra: serde_json::Value,
    /// Auxiliary tensors, e.g. optimizer moments.
    pub state: TensorMap<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Seq2Seq<T>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            extra: serde_json::Value::Null,
            state: TensorMap::new(),
        }
    }

    pub fn into_model(self) -> Seq2Seq<T> {
        Seq2Seq {
            config: self.config,
            params: self.params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(T::DTYPE.tag());
        let meta = serde_json::to_vec(&Meta {
            config: self.config.clone(),
            extra: self.extra.clone(),
        })?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);

        let mut entries: Vec<(&str, u8, &Tensor<T>)> = self
            .params
            .iter()
            .map(|(n, p)| (n.as_str(), p.group.tag(), p.value.as_ref()))
            .chain(self.state.iter().map(|(n, t)| (n.as_str(), STATE_KIND, t)))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (name, kind, t) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(kind);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Parses an archive, converting stored values to `T` when the widths differ.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = DType::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))?;
        let meta_len = r.u64()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;

        let count = r.u64()? as usize;
        let mut params = Vec::new();
        let mut state = TensorMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let kind = r.u8()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.width())?;
            let data: Vec<T> = match dtype {
                DType::F64 => raw.chunks(8).map(|c| T::lit(f64::read_le(c))).collect(),
                DType::F32 => raw.chunks(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
            };
            let t = Tensor::new(shape, data)?;
            if kind == STATE_KIND {
                state.insert(name, t);
            } else {
                let group = Group::from_tag(kind)
                    .ok_or_else(|| Error::Checkpoint(format!("bad group tag {kind} for {name}")))?;
                params.push((name, group, t));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let ck = Checkpoint {
            config: meta.config,
            params: ParameterStore::from_parts(params),
            extra: meta.extra,
            state,
        };
        ck.check_layout()?;
        Ok(ck)
    }

    fn check_layout(&self) -> Result<()> {
        let expected = super::params::layout(&self.config);
        if expected.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for spec in expected {
            let p = self
                .params
                .get(&spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", spec.name)))?;
            if p.value.shape() != spec.shape.as_slice() || p.group != spec.group {
                return Err(Error::Checkpoint(format!(
                    "parameter {} does not match the config",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Seq2Seq<f64> {
        Seq2Seq::new(ModelConfig::tiny(30), 5).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_tensor() {
        let m = model();
        let mut ck = Checkpoint::from_model(&m);
        ck.extra = serde_json::json!({"step": 12});
        ck.state.insert("adam.m.out.b".into(), Tensor::full(&[30], 0.5));
        let back = Checkpoint::<f64>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.extra["step"], 12);
        assert_eq!(back.state["adam.m.out.b"].data(), &[0.5; 30]);
        for (name, p) in m.params.iter() {
            let q = back.params.get(name).unwrap();
            assert_eq!(q.group, p.group);
            assert_eq!(q.value.data(), p.value.data());
        }
    }

    #[test]
    fn bytes_are_deterministic() {
        let a = Checkpoint::from_model(&model()).to_bytes().unwrap();
        let b = Checkpoint::from_model(&model()).to_bytes().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f64_file_loads_as_f32() {
        let bytes = Checkpoint::from_model(&model()).to_bytes().unwrap();
        let ck = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(ck.params.len(), model().params.len());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = Checkpoint::from_model(&model()).to_bytes().unwrap();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }
}
