//! MVTW checkpoint format.
//!
//! ```text
//! "MVTW" | version u16 | config JSON length u32 | config JSON (UTF-8)
//!        | SHA-256 of the config JSON (32 bytes) | tensor count u32
//!        | per tensor: ndim u32, dims u32 × ndim, values f32 × prod(dims)
//! ```
//! All integers and floats are little-endian; tensors follow parameter
//! declaration order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};
use crate::trackio::Reader;

pub const MAGIC: &[u8; 4] = b"MVTW";
pub const VERSION: u16 = 1;

pub fn config_json(config: &ModelConfig) -> Result<String> {
    Ok(serde_json::to_string(config)?)
}

pub fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(config_json(config)?.as_bytes())))
}

pub fn encode<F: Real>(model: &Model<F>) -> Result<Vec<u8>> {
    let json = config_json(&model.config())?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(json.as_bytes());
    buf.extend_from_slice(&Sha256::digest(json.as_bytes()));
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let shape = p.value.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    Ok(buf)
}

/// Decodes a checkpoint. When `expected` is given, its config hash must match
/// the stored one.
pub fn decode<F: Real>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Model<F>> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("not an MVTW checkpoint".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let json = r.take(len, "config")?;
    let stored_hash = r.take(32, "config hash")?;
    if Sha256::digest(json).as_slice() != stored_hash {
        return Err(Error::Format("config hash does not match the stored config".into()));
    }
    let config: ModelConfig = serde_json::from_slice(json)?;
    if let Some(want) = expected {
        if config_hash(want)?.as_bytes() != hex::encode(stored_hash).as_bytes() {
            return Err(Error::Config("checkpoint was written for a different model config".into()));
        }
    }
    let mut model = Model::<F>::new(&config, 0)?;
    let count = r.u32("tensor count")? as usize;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config declares {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("dim")? as usize);
        }
        if shape != p.value.shape() {
            return Err(Error::Format(format!(
                "tensor {i} has shape {shape:?}, config expects {:?}",
                p.value.shape()
            )));
        }
        let vals = r.f32s(shape.iter().product(), "tensor values")?;
        p.value = Tensor::from_vec(&shape, vals.into_iter().map(F::of_f32).collect())?;
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    drop(params);
    Ok(model)
}

pub fn save<F: Real>(model: &Model<F>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load<F: Real>(path: impl AsRef<Path>) -> Result<Model<F>> {
    decode(&fs::read(path)?, None)
}

pub fn load_expecting<F: Real>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Model<F>> {
    decode(&fs::read(path)?, Some(config))
}
