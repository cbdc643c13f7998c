//! Model + mixture checkpoint container.
//!
//! ```text
//! "DCGM" | version u32 | header_len u64 | header JSON | tensors (f64 LE, row-major)
//! ```
//!
//! The JSON header holds the network spec, optional training metadata and
//! the ordered tensor directory (`name`, `shape`). Tensor payloads follow in
//! directory order with no padding: network weights as named by
//! [`Model::param_names`], then `mixture.means`, `mixture.log_vars`,
//! `mixture.log_weights`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::Scores;
use crate::model::{MixtureParams, Model, NetworkSpec};

pub const MAGIC: &[u8; 4] = b"DCGM";
pub const VERSION: u32 = 1;

const MIXTURE_KEYS: [&str; 3] = ["mixture.means", "mixture.log_vars", "mixture.log_weights"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Epoch the snapshot was taken after (0 = before training).
    pub epoch: Option<usize>,
    pub test_scores: Option<Scores>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub mixture: MixtureParams,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mixture = [&self.mixture.means, &self.mixture.log_vars, &self.mixture.log_weights];
        let tensors: Vec<(String, &Tensor)> = self
            .model
            .param_names()
            .into_iter()
            .zip(self.model.params())
            .chain(MIXTURE_KEYS.iter().map(|s| s.to_string()).zip(mixture))
            .collect();
        let header = Header {
            spec: self.model.spec().clone(),
            meta: self.meta.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |detail: String| Error::Format {
            kind: "checkpoint",
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                kind: "checkpoint header",
                expected: 16,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(fmt(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version} (expected {VERSION})")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[16..];
        if (body.len() as u64) < hlen {
            return Err(Error::Truncated {
                kind: "checkpoint header",
                expected: 16 + hlen,
                actual: bytes.len() as u64,
            });
        }
        let header: Header = serde_json::from_slice(&body[..hlen as usize]).map_err(|e| fmt(e.to_string()))?;
        let mut payload = &body[hlen as usize..];
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 8).sum();
        if payload.len() != expected {
            if payload.len() < expected {
                return Err(Error::Truncated {
                    kind: "checkpoint tensors",
                    expected: expected as u64,
                    actual: payload.len() as u64,
                });
            }
            return Err(fmt(format!("{} trailing bytes", payload.len() - expected)));
        }
        let mut named = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let len: usize = entry.shape.iter().product();
            let (head, rest) = payload.split_at(len * 8);
            payload = rest;
            let data: Vec<f64> = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(fmt(format!("tensor {} holds non-finite values", entry.name)));
            }
            named.push((entry.name.as_str(), Tensor::new(entry.shape.clone(), data)?));
        }
        let expected_names: Vec<String> = Model::zeros(header.spec.clone())?
            .param_names()
            .into_iter()
            .chain(MIXTURE_KEYS.iter().map(|s| s.to_string()))
            .collect();
        let names: Vec<&str> = named.iter().map(|(n, _)| *n).collect();
        if names != expected_names {
            return Err(fmt(format!("tensor directory {names:?} does not match the network spec")));
        }
        let mut tensors: Vec<Tensor> = named.into_iter().map(|(_, t)| t).collect();
        let mix: Vec<Tensor> = tensors.split_off(tensors.len() - 3);
        let [means, log_vars, log_weights]: [Tensor; 3] = mix.try_into().expect("three mixture tensors");
        let model = Model::from_params(header.spec, tensors)?;
        let mixture = MixtureParams::new(means, log_vars, log_weights)?;
        if mixture.latent_dim() != model.spec().latent_dim {
            return Err(fmt("mixture and network latent sizes differ".into()));
        }
        Ok(Checkpoint {
            model,
            mixture,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?, path)
    }
}
