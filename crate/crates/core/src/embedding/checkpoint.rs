//! Binary checkpoints: `PMSMCKPT`, version (u32 LE), header length (u32 LE),
//! JSON header, then every tensor as little-endian `f32` in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::ModelArch;
use super::params::PmsmParams;
use crate::error::{Error, Result};
use crate::util::config_hash;

const MAGIC: &[u8; 8] = b"PMSMCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ModelArch,
    arch_hash: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PmsmParams,
    /// Free-form run metadata stored in the header.
    pub meta: serde_json::Value,
}

pub fn arch_hash(arch: &ModelArch) -> String {
    config_hash(arch)
}

pub fn encode(params: &PmsmParams, meta: &serde_json::Value) -> Result<Vec<u8>> {
    params.check()?;
    let header = Header {
        arch: params.arch.clone(),
        arch_hash: arch_hash(&params.arch),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape.clone(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.get(..8) != Some(MAGIC) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(bytes, 8)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = read_u32(bytes, 12)? as usize;
    let json = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.arch_hash != arch_hash(&header.arch) {
        return Err(Error::Checkpoint("architecture hash does not match descriptor".into()));
    }
    let mut params = PmsmParams::zeros(&header.arch)?;
    let names = params.tensor_names();
    if names.len() != header.tensors.len() {
        return Err(Error::Checkpoint("tensor count mismatch".into()));
    }
    let mut pos = 16 + len;
    for ((t, name), entry) in params.tensors_mut().zip(names).zip(&header.tensors) {
        if entry.name != name || entry.shape != t.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match {name} {:?}",
                entry.name, entry.shape, t.shape
            )));
        }
        let raw = bytes
            .get(pos..pos + 4 * t.data.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated data in {name}")))?;
        for (v, b) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
        }
        pos += raw.len();
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Checkpoint {
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, params: &PmsmParams, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode(params, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
