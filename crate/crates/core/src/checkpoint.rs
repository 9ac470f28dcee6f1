//! Binary checkpoint:
//!
//! ```text
//! b"DDGPT1\0" | u64 LE header length | UTF-8 JSON header | tensors as LE f32
//! ```
//!
//! Tensors follow the order of `header.tensors`: model parameters first,
//! then the optimizer moments as `opt.m.<name>` and `opt.v.<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GptModel, ModelConfig};
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::rng::RngSnapshot;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"DDGPT1\0";
pub const FORMAT_VERSION: u32 = 1;

const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    /// Next iteration to run.
    pub iteration: usize,
    pub current_dropout: f64,
    pub rng: RngSnapshot,
    pub optimizer_step: u64,
    pub tensors: Vec<TensorEntry>,
    /// Caller-defined state (schedule controller, metrics so far, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: usize,
    pub current_dropout: f64,
    pub rng: RngSnapshot,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &GptModel, optimizer: &AdamW, iteration: usize, rng: RngSnapshot, extra: serde_json::Value) -> Checkpoint {
        Checkpoint {
            config: model.config().clone(),
            iteration,
            current_dropout: model.current_dropout(),
            rng,
            params: model.params.clone(),
            optimizer: optimizer.clone(),
            extra,
        }
    }

    /// Rebuilds the model with the stored dropout rate applied to every site.
    pub fn model(&self) -> Result<GptModel> {
        let mut config = self.config.clone();
        config.dropout_p = self.current_dropout;
        GptModel::from_params(config, self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blobs: Vec<&Tensor> = Vec::new();
        for (name, t) in self.params.iter() {
            entries.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            });
            blobs.push(t);
        }
        for (prefix, map) in [(OPT_M, &self.optimizer.m), (OPT_V, &self.optimizer.v)] {
            for (name, t) in map {
                entries.push(TensorEntry {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                });
                blobs.push(t);
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            iteration: self.iteration,
            current_dropout: self.current_dropout,
            rng: self.rng,
            optimizer_step: self.optimizer.step,
            tensors: entries,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_floats: usize = blobs.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * n_floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in blobs {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: &str| Error::IncompatibleCheckpoint(m.to_string());
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("bad magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let (len, rest) = rest.split_at(8);
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        if rest.len() < len {
            return Err(bad("truncated header"));
        }
        let (json, mut body) = rest.split_at(len);
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::IncompatibleCheckpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }

        let mut params = ParamStore::new();
        let mut m = IndexMap::new();
        let mut v = IndexMap::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if body.len() < 4 * n {
                return Err(Error::IncompatibleCheckpoint(format!("truncated tensor {}", entry.name)));
            }
            let (raw, tail) = body.split_at(4 * n);
            body = tail;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&entry.shape, data)
                .map_err(|e| Error::IncompatibleCheckpoint(format!("tensor {}: {e}", entry.name)))?;
            if let Some(name) = entry.name.strip_prefix(OPT_M) {
                m.insert(name.to_string(), t);
            } else if let Some(name) = entry.name.strip_prefix(OPT_V) {
                v.insert(name.to_string(), t);
            } else {
                params.insert(entry.name.clone(), t);
            }
        }
        if !body.is_empty() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Checkpoint {
            config: header.config,
            iteration: header.iteration,
            current_dropout: header.current_dropout,
            rng: header.rng,
            params,
            optimizer: AdamW {
                step: header.optimizer_step,
                m,
                v,
            },
            extra: header.extra,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}
