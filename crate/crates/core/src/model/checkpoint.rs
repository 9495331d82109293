//! Versioned binary checkpoints.
//!
//! ```text
//! magic     8 bytes  "SXCKPT01"
//! version   u32      1
//! dims      7 × u32  vocab_size hidden heads layers ffn head_dim max_len
//! flags     u8       bit 0 final_norm, bit 1 rotary
//! count     u32      number of tensors
//! tensor    u32 name length, UTF-8 name, u32 rank, rank × u32 dims,
//!           row-major little-endian f32 values
//! ```
//! Tensors appear in [`Params::tensors`] order. All integers are little-endian.

use std::io::{Read, Write};

use super::{Model, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SXCKPT01";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::MalformedCheckpoint(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::MalformedCheckpoint("truncated".into()))?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, model: &Model<T>) -> Result<()> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    for v in [c.vocab_size, c.hidden, c.heads, c.layers, c.ffn, c.head_dim, c.max_len] {
        put_u32(w, v)?;
    }
    w.write_all(&[u8::from(c.final_norm) | (u8::from(c.rotary) << 1)])?;
    let tensors = model.params.tensors();
    put_u32(w, tensors.len())?;
    for (name, t) in tensors {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.ndim())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        for &v in t.iter() {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<Model<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::MalformedCheckpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::MalformedCheckpoint("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(Error::MalformedCheckpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = get_u32(r)?;
    }
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)
        .map_err(|_| Error::MalformedCheckpoint("truncated".into()))?;
    let config = ModelConfig {
        vocab_size: dims[0],
        hidden: dims[1],
        heads: dims[2],
        layers: dims[3],
        ffn: dims[4],
        head_dim: dims[5],
        max_len: dims[6],
        final_norm: flags[0] & 1 != 0,
        rotary: flags[0] & 2 != 0,
    };
    config
        .validate()
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let mut params = Params::<T>::zeros(&config);
    let count = get_u32(r)?;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "expected {} tensors, found {count}",
            tensors.len()
        )));
    }
    for (name, t) in tensors.iter_mut() {
        let len = get_u32(r)?;
        let mut stored = vec![0u8; len];
        r.read_exact(&mut stored)
            .map_err(|_| Error::MalformedCheckpoint("truncated name".into()))?;
        if stored != name.as_bytes() {
            return Err(Error::MalformedCheckpoint(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(&stored)
            )));
        }
        let rank = get_u32(r)?;
        let shape: Vec<usize> = (0..rank).map(|_| get_u32(r)).collect::<Result<_>>()?;
        if shape != t.shape() {
            return Err(Error::MalformedCheckpoint(format!("shape of {name}: {shape:?} vs {:?}", t.shape())));
        }
        let mut bytes = vec![0u8; t.len() * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::MalformedCheckpoint(format!("truncated data for {name}")))?;
        for (dst, c) in t.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        }
    }
    drop(tensors);
    Ok(Model { config, params })
}

/// Fails unless the checkpoint's architecture equals `expected`.
pub fn ensure_compatible(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint {found:?} does not match config {expected:?}"
        )));
    }
    Ok(())
}
