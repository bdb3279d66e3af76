//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LSFW"  u32 version  u32 tensor_count
//! per tensor: u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 payload
//! ```
//!
//! Tensors are written in name order, so equal stores give equal bytes.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"LSFW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic: not a weight file")]
    BadMagic,
    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated payload in tensor `{tensor}`")]
    TruncatedPayload { tensor: String },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = WeightsError> = std::result::Result<T, E>;

pub fn write_store(store: &ParamStore<f32>, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        let bytes = name.as_bytes();
        let len = u16::try_from(bytes.len())
            .map_err(|_| WeightsError::Malformed(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(bytes)?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| WeightsError::Malformed(format!("rank too large: {name}")))?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn read_store(mut r: impl Read) -> Result<ParamStore<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    match c.take(4) {
        Some(m) if m == MAGIC => {}
        _ => return Err(WeightsError::BadMagic),
    }
    let version = c.u32().ok_or(WeightsError::TruncatedHeader)?;
    if version != VERSION {
        return Err(WeightsError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let count = c.u32().ok_or(WeightsError::TruncatedHeader)?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = c
            .take(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or(WeightsError::TruncatedHeader)?;
        let name = c
            .take(name_len)
            .ok_or(WeightsError::TruncatedHeader)
            .and_then(|b| {
                String::from_utf8(b.to_vec())
                    .map_err(|_| WeightsError::Malformed(format!("tensor {i} name is not UTF-8")))
            })?;
        let truncated = || WeightsError::TruncatedPayload { tensor: name.clone() };
        let rank = c.take(1).ok_or_else(truncated)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32().ok_or_else(truncated)? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WeightsError::Malformed(format!("tensor `{name}` is too large")))?;
        let payload = c.take(len).ok_or_else(truncated)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if store.contains(&name) {
            return Err(WeightsError::Malformed(format!("duplicate tensor `{name}`")));
        }
        let t = Tensor::from_vec(shape, data).map_err(|e| WeightsError::Malformed(e.to_string()))?;
        store.insert(name, t);
    }
    if c.pos != buf.len() {
        return Err(WeightsError::Malformed(format!(
            "{} trailing bytes",
            buf.len() - c.pos
        )));
    }
    Ok(store)
}

pub fn save_store(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_store(store, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_store(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    read_store(std::fs::File::open(path)?)
}
