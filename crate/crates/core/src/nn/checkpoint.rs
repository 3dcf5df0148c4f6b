//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `SIK1`, u32 header length, JSON header, then
//! raw tensor blobs in table order. The header carries the architecture
//! descriptor and its SHA-256, so a file can be checked against the network
//! it is loaded into.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{CheckpointError, Error, Result};

const MAGIC: &[u8; 4] = b"SIK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub step: u64,
    pub dataset_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: serde_json::Value,
    architecture_hash: String,
    tensors: Vec<TensorEntry>,
    training: TrainingMeta,
}

/// Named tensors plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
    pub training: TrainingMeta,
    pub dtype: DType,
}

/// SHA-256 over the canonical (key-sorted) JSON encoding.
pub fn architecture_hash(architecture: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(architecture).expect("json value serializes");
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let table: Vec<TensorEntry> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    dtype: self.dtype,
                    offset,
                };
                offset += t.len() * self.dtype.width();
                e
            })
            .collect();
        let header = Header {
            version: CHECKPOINT_VERSION,
            architecture: self.architecture.clone(),
            architecture_hash: architecture_hash(&self.architecture),
            tensors: table,
            training: self.training.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for &x in t.data() {
                match self.dtype {
                    DType::F64 => out.extend_from_slice(&x.to_le_bytes()),
                    DType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Checkpoint(CheckpointError::Corrupt(m.to_string()));
        if bytes.len() < 8 {
            return Err(corrupt("shorter than the fixed prefix"));
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::Magic.into());
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body_start = 8 + hlen;
        if bytes.len() < body_start {
            return Err(corrupt("header runs past end of file"));
        }
        let header: Header = serde_json::from_slice(&bytes[8..body_start])
            .map_err(|e| corrupt(&format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(header.version).into());
        }
        let recomputed = architecture_hash(&header.architecture);
        if recomputed != header.architecture_hash {
            return Err(CheckpointError::Hash {
                found: header.architecture_hash,
                expected: recomputed,
            }
            .into());
        }
        let body = &bytes[body_start..];
        let mut dtype = DType::F64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_end = 0;
        for e in &header.tensors {
            dtype = e.dtype;
            let n: usize = e.shape.iter().product();
            let w = e.dtype.width();
            let end = e.offset + n * w;
            if e.offset != expected_end || end > body.len() {
                return Err(corrupt(&format!("tensor `{}` out of bounds", e.name)));
            }
            let data: Vec<f64> = body[e.offset..end]
                .chunks_exact(w)
                .map(|c| match e.dtype {
                    DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                    DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                })
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected_end = end;
        }
        if expected_end != body.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Self {
            architecture: header.architecture,
            tensors,
            training: header.training,
            dtype,
        })
    }

    /// Fails with a hash error unless the file was written for
    /// `architecture`.
    pub fn expect_architecture(&self, architecture: &serde_json::Value) -> Result<()> {
        let found = architecture_hash(&self.architecture);
        let expected = architecture_hash(architecture);
        if found != expected {
            return Err(CheckpointError::Hash { found, expected }.into());
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// SHA-256 of a serialized checkpoint; identifies a loaded model.
pub fn checkpoint_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
