//! Binary checkpoint: magic, version, a JSON header, then little-endian
//! `f64` parameter blocks, each prefixed by its element count.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FieldConfig, FieldParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSNERFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Adam moment estimates, one block per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub step: u64,
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: FieldParams<T>,
    /// Optimizer iterations completed.
    pub step: u64,
    pub moments: Option<Moments<T>>,
    /// Free-form metadata echoed into the header.
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    field: FieldConfig,
    frame_count: usize,
    step: u64,
    blocks: Vec<[usize; 2]>,
    has_moments: bool,
    #[serde(default)]
    extra: serde_json::Value,
}

fn write_block<W: Write, T: Real>(w: &mut W, block: &Array2<T>) -> Result<()> {
    w.write_all(&(block.len() as u64).to_le_bytes())?;
    for x in block.iter() {
        w.write_all(&x.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_block<R: Read, T: Real>(r: &mut R, shape: (usize, usize)) -> Result<Array2<T>> {
    let n = read_u64(r)? as usize;
    if n != shape.0 * shape.1 {
        return Err(Error::Format(format!(
            "block holds {n} values, expected {}x{}",
            shape.0, shape.1
        )));
    }
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    let vals = buf
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(Array2::from_shape_vec(shape, vals).expect("checked length"))
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blocks = self.params.blocks();
        let header = Header {
            field: self.params.config.clone(),
            frame_count: self.params.frame_count(),
            step: self.step,
            blocks: blocks.iter().map(|b| [b.nrows(), b.ncols()]).collect(),
            has_moments: self.moments.is_some(),
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &blocks {
            write_block(&mut out, b)?;
        }
        if let Some(m) = &self.moments {
            if m.m.len() != blocks.len() || m.v.len() != blocks.len() {
                return Err(Error::Format("moment blocks do not match parameters".into()));
            }
            out.extend_from_slice(&m.step.to_le_bytes());
            for b in m.m.iter().chain(&m.v) {
                write_block(&mut out, b)?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint truncated".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u64(&mut r)? as usize;
        if len > r.len() {
            return Err(Error::Format("checkpoint header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        let mut params = FieldParams::<T>::zeros(&header.field, header.frame_count)?;
        let shapes: Vec<(usize, usize)> = params.blocks().iter().map(|b| (b.nrows(), b.ncols())).collect();
        if shapes.iter().map(|s| [s.0, s.1]).collect::<Vec<_>>() != header.blocks {
            return Err(Error::Format("block shapes do not match the stored config".into()));
        }
        let read_all = |r: &mut &[u8]| -> Result<Vec<Array2<T>>> {
            shapes.iter().map(|s| read_block(r, *s)).collect()
        };
        let values = read_all(&mut r).map_err(truncated)?;
        for (dst, src) in params.blocks_mut().into_iter().zip(values) {
            *dst = src;
        }
        let moments = if header.has_moments {
            let step = read_u64(&mut r).map_err(truncated)?;
            let m = read_all(&mut r).map_err(truncated)?;
            let v = read_all(&mut r).map_err(truncated)?;
            Some(Moments { step, m, v })
        } else {
            None
        };
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", r.len())));
        }
        params.validate()?;
        Ok(Checkpoint {
            params,
            step: header.step,
            moments,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn truncated(e: Error) -> Error {
    match e {
        Error::Io(_) => Error::Format("checkpoint truncated".into()),
        other => other,
    }
}
