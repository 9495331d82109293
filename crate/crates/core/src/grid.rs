//! Binary score grid files.
//!
//! Single grid: `SXGRID01`, `u32` rows, `u32` cols, then `rows * cols`
//! little-endian `f32` in row-major order. Masked cells are stored as `-inf`.
//!
//! Bundle: `SXBNDL01`, `u32` count, then per entry a `u32` key length, the
//! UTF-8 key (a query rendering), and one grid body (rows, cols, data)
//! without the magic.

use std::collections::HashMap;
use std::io::{Read, Write};

use ndarray::Array2;

use crate::decode::ScoreMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GRID_MAGIC: &[u8; 8] = b"SXGRID01";
pub const BUNDLE_MAGIC: &[u8; 8] = b"SXBNDL01";

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::MalformedGrid(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn write_body<T: Scalar>(w: &mut impl Write, z: &ScoreMatrix<T>) -> Result<()> {
    let (rows, cols) = z.values.dim();
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for v in z.values.iter() {
        w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_body<T: Scalar>(r: &mut impl Read) -> Result<ScoreMatrix<T>> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut bytes = vec![0u8; rows * cols * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::MalformedGrid(format!("truncated data: {e}")))?;
    let data: Vec<T> = bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(ScoreMatrix {
        values: Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::MalformedGrid(e.to_string()))?,
    })
}

fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)
        .map_err(|_| Error::MalformedGrid("missing magic".into()))?;
    if &m != magic {
        return Err(Error::MalformedGrid("bad magic".into()));
    }
    Ok(())
}

pub fn write_grid<T: Scalar>(w: &mut impl Write, z: &ScoreMatrix<T>) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    write_body(w, z)
}

pub fn read_grid<T: Scalar>(r: &mut impl Read) -> Result<ScoreMatrix<T>> {
    expect_magic(r, GRID_MAGIC)?;
    read_body(r)
}

/// Score matrices keyed by query rendering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreBundle {
    entries: Vec<(String, ScoreMatrix<f32>)>,
    index: HashMap<String, usize>,
}

impl ScoreBundle {
    pub fn insert(&mut self, key: String, z: ScoreMatrix<f32>) {
        match self.index.get(&key) {
            Some(&i) => self.entries[i].1 = z,
            None => {
                self.index.insert(key.clone(), self.entries.len());
                self.entries.push((key, z));
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&ScoreMatrix<f32>> {
        self.index.get(key).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (key, z) in &self.entries {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            write_body(w, z)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, BUNDLE_MAGIC)?;
        let count = read_u32(r)?;
        let mut bundle = ScoreBundle::default();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut key = vec![0u8; len];
            r.read_exact(&mut key)
                .map_err(|_| Error::MalformedGrid("truncated key".into()))?;
            let key = String::from_utf8(key).map_err(|_| Error::MalformedGrid("key is not UTF-8".into()))?;
            let z = read_body(r)?;
            bundle.insert(key, z);
        }
        Ok(bundle)
    }
}
