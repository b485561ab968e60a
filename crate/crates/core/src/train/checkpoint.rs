use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TrainConfig;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 9] = b"PROOFKIT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    params: Vec<ManifestEntry>,
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vec<String>,
    metrics: Value,
}

/// Serialised model: named parameters plus the configuration and metrics
/// they were produced with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vec<String>,
    pub metrics: Value,
    pub params: Vec<(String, Tensor)>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, train: &TrainConfig, metrics: Value) -> Self {
        Self {
            model: model.config.clone(),
            train: train.clone(),
            vocab: model.vocab.tokens().to_vec(),
            metrics,
            params: model.store.iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let manifest = Manifest {
            params,
            model: self.model.clone(),
            train: self.train.clone(),
            vocab: self.vocab.clone(),
            metrics: self.metrics.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(32 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&((offset * 8) as u64).to_le_bytes());
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(format_err("not a checkpoint: bad magic bytes"));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let mlen = r.u64("manifest length")? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen, "manifest")?)
            .map_err(|e| format_err(format!("bad checkpoint manifest: {e}")))?;
        let plen = r.u64("payload length")? as usize;
        let payload = r.take(plen, "payload")?;
        if r.pos != bytes.len() {
            return Err(format_err("trailing bytes after checkpoint payload"));
        }
        if !plen.is_multiple_of(8) {
            return Err(format_err("payload is not a whole number of f64 values"));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut params = Vec::with_capacity(manifest.params.len());
        let mut expected = 0;
        for e in manifest.params {
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.offset + n > values.len() {
                return Err(format_err(format!("parameter `{}` does not fit the payload", e.name)));
            }
            let t = Tensor::new(e.shape, values[e.offset..e.offset + n].to_vec())
                .map_err(|_| format_err(format!("parameter `{}` has an invalid shape", e.name)))?;
            params.push((e.name, t));
            expected += n;
        }
        if expected != values.len() {
            return Err(format_err("payload longer than the manifest describes"));
        }
        Ok(Self {
            model: manifest.model,
            train: manifest.train,
            vocab: manifest.vocab,
            metrics: manifest.metrics,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the model; every parameter must match the manifest by name
    /// and shape.
    pub fn to_model(&self) -> Result<Model> {
        let vocab = Vocabulary::from_id_list(self.vocab.clone())?;
        let mut model = Model::new(self.model.clone(), vocab, 0)?;
        if model.store.len() != self.params.len() {
            return Err(format_err(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, t) in &self.params {
            let id = model
                .store
                .find(name)
                .ok_or_else(|| format_err(format!("unknown parameter `{name}`")))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(format_err(format!(
                    "parameter `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(model)
    }
}
