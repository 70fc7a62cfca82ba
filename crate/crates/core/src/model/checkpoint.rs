//! Checkpoint files.
//!
//! Layout: the magic line `SIGNBART-CKPT 1`, one line of JSON header, then
//! the tensor data as little-endian `f64`, tensor after tensor in header
//! order. Offsets in the header are relative to the start of the data block.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::SignBart;
use super::params::ModelParameters;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &[u8] = b"SIGNBART-CKPT 1\n";
pub const FORMAT_VERSION: u32 = 1;

/// Training context stored with the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMetadata {
    /// `"best"`, `"last"` or empty for untrained weights.
    #[serde(default)]
    pub kind: String,
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub steps: u64,
    #[serde(default)]
    pub val_top1: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Normalization state of the training data, e.g. `part-normalized:three-box`.
    #[serde(default)]
    pub data_state: Option<String>,
    /// Gloss per class index, when the training data carried them.
    #[serde(default)]
    pub glosses: Vec<Option<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    metadata: CheckpointMetadata,
    tensors: Vec<TensorEntry>,
    data_bytes: u64,
}

/// Model weights, configuration and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SignBart<f64>,
    pub metadata: CheckpointMetadata,
}

impl Checkpoint {
    /// Gradient buffers are dropped; a checkpoint holds weights only.
    pub fn new(mut model: SignBart<f64>, metadata: CheckpointMetadata) -> Self {
        model.params_mut().zero_grad();
        Checkpoint { model, metadata }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut tensors = Vec::new();
        for (name, t) in self.model.params().iter() {
            let len = (t.len() * 8) as u64;
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                len,
            });
            offset += len;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            metadata: self.metadata.clone(),
            tensors,
            data_bytes: offset,
        };
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for (_, t) in self.model.params().iter() {
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            let n = bytes.iter().zip(MAGIC).take_while(|(a, b)| a == b).count();
            return Err(Error::Format {
                offset: n as u64,
                detail: "not a SignBart checkpoint (bad magic line)".into(),
            });
        }
        let start = MAGIC.len();
        let Some(nl) = bytes[start..].iter().position(|&b| b == b'\n') else {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                detail: "header line is not terminated".into(),
            });
        };
        let header: Header = serde_json::from_slice(&bytes[start..start + nl]).map_err(|e| Error::Format {
            offset: start as u64,
            detail: format!("bad header: {e}"),
        })?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                offset: start as u64,
                detail: format!(
                    "format version {} is not supported (expected {FORMAT_VERSION})",
                    header.format_version
                ),
            });
        }
        let data_start = start + nl + 1;
        let data = &bytes[data_start..];
        if (data.len() as u64) < header.data_bytes {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                detail: format!(
                    "truncated: header declares {} data bytes, file has {}",
                    header.data_bytes,
                    data.len()
                ),
            });
        }
        if data.len() as u64 > header.data_bytes {
            return Err(Error::Format {
                offset: data_start as u64 + header.data_bytes,
                detail: format!("{} trailing bytes", data.len() as u64 - header.data_bytes),
            });
        }
        let mut tensors = IndexMap::new();
        let mut expected_offset = 0u64;
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let abs = data_start as u64 + entry.offset;
            if entry.offset != expected_offset || entry.len != numel as u64 * 8 {
                return Err(Error::Format {
                    offset: abs,
                    detail: format!("directory entry for {} is inconsistent", entry.name),
                });
            }
            let end = entry.offset + entry.len;
            if end > header.data_bytes {
                return Err(Error::Format {
                    offset: abs,
                    detail: format!("tensor {} runs past the data block", entry.name),
                });
            }
            let raw = &data[entry.offset as usize..end as usize];
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(entry.shape, values).map_err(|e| Error::Format {
                offset: abs,
                detail: format!("tensor {}: {e}", entry.name),
            })?;
            if tensors.insert(entry.name.clone(), t).is_some() {
                return Err(Error::Format {
                    offset: abs,
                    detail: format!("duplicate tensor {}", entry.name),
                });
            }
            expected_offset = end;
        }
        if expected_offset != header.data_bytes {
            return Err(Error::Format {
                offset: data_start as u64 + expected_offset,
                detail: "directory does not cover the data block".into(),
            });
        }
        let params = ModelParameters::from_tensors(&header.config, tensors)?;
        let model = SignBart::from_parameters(header.config, params)?;
        Ok(Checkpoint {
            model,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
