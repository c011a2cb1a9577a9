//! Checkpoint files: `L2FM` magic, version, JSON config and parameter
//! index, little-endian blobs, SHA-256 trailer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{L2FMambaModel, ModelConfig};
use crate::error::{Error, Result};
use crate::framed;
use crate::params::ParamTable;
use crate::tensor::{DType, Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "L2FM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<Entry>,
}

pub fn encode_checkpoint<T: Real>(m: &L2FMambaModel<T>) -> Result<Vec<u8>> {
    m.validate()?;
    let mut payload = Vec::new();
    let mut params = Vec::with_capacity(m.params.len());
    for (name, t) in &m.params {
        params.push(Entry {
            name: name.clone(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        payload.extend_from_slice(&t.to_le_bytes());
    }
    let header = Header {
        config: m.config.clone(),
        params,
    };
    framed::encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &header, &payload)
}

/// Parses checkpoint bytes. With `expected`, the stored config must match it.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<L2FMambaModel<T>> {
    let (header, payload): (Header, _) = framed::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    if let Some(want) = expected {
        if let Some((field, found, expected)) = header.config.first_mismatch(want) {
            return Err(Error::ConfigMismatch { field, found, expected });
        }
    }
    header.config.validate()?;
    let mut params = ParamTable::new();
    for e in &header.params {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * e.dtype.size();
        let raw = payload
            .get(e.offset..end)
            .ok_or_else(|| Error::Header(format!("parameter `{}` runs past the payload", e.name)))?;
        let t: Tensor<T> = match e.dtype {
            DType::F32 => Tensor::<f32>::from_le_bytes(&e.shape, raw)?.cast(),
            DType::F64 => Tensor::<f64>::from_le_bytes(&e.shape, raw)?.cast(),
        };
        if params.insert(e.name.clone(), t).is_some() {
            return Err(Error::Header(format!("parameter `{}` appears twice", e.name)));
        }
    }
    let m = L2FMambaModel {
        config: header.config,
        params,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_checkpoint<T: Real>(m: &L2FMambaModel<T>, path: &Path) -> Result<()> {
    framed::write_atomic(path, &encode_checkpoint(m)?)
}

pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<&ModelConfig>) -> Result<L2FMambaModel<T>> {
    decode_checkpoint(&framed::read(path)?, expected)
}
