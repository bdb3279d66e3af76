//! On-disk containers for windowed signals and encoded latents.
//!
//! Window file, all integers little-endian:
//!
//! ```text
//! "LSFD"  u32 version  u32 channel_count  (u16 len, name bytes) per channel
//! u32 window_len  u32 window_count
//! per window: u32 channel id, u64 start index, u8 label, f32 samples[window_len]
//! ```
//!
//! Latent file:
//!
//! ```text
//! "LSFL"  u32 version  u32 modality_count  (u16 len, name bytes) per modality
//! u32 D  u32 H  u32 W  u32 window_count
//! per window: u64 start index, u8 label
//! per modality, per window: f32 latent[D·H·W]
//! ```

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ingest::Window;
use crate::nn::Tensor;
use crate::pipeline::{PipelineError, WindowSet};

pub const WINDOW_MAGIC: &[u8; 4] = b"LSFD";
pub const LATENT_MAGIC: &[u8; 4] = b"LSFL";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic: expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for DatasetError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Self::Truncated
        } else {
            Self::Io(e)
        }
    }
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn put_name(w: &mut impl Write, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| DatasetError::Malformed(format!("name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| DatasetError::Malformed(format!("count {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, values: impl Iterator<Item = f32>) -> Result<()> {
    let buf: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    w.write_all(&buf)?;
    Ok(())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(get(r)?) as usize)
}

fn get_name(r: &mut impl Read) -> Result<String> {
    let len = u16::from_le_bytes(get(r)?) as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| DatasetError::Malformed("name is not UTF-8".into()))
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut b = vec![0u8; 4 * n];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn header(r: &mut impl Read, magic: &[u8; 4], expected: &'static str) -> Result<()> {
    if &get::<4>(r)? != magic {
        return Err(DatasetError::BadMagic { expected });
    }
    let found = u32::from_le_bytes(get(r)?);
    if found != VERSION {
        return Err(DatasetError::VersionMismatch {
            found,
            expected: VERSION,
        });
    }
    Ok(())
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b)? {
        0 => Ok(()),
        _ => Err(DatasetError::Malformed("trailing bytes".into())),
    }
}

/// Windows of several channels, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowDataset {
    pub channels: Vec<String>,
    pub window_len: usize,
    pub windows: Vec<Window>,
}

impl WindowDataset {
    /// Flattens per-channel windows in channel-name order.
    pub fn from_channels(by_channel: &BTreeMap<String, Vec<Window>>) -> Result<Self> {
        let channels: Vec<String> = by_channel.keys().cloned().collect();
        let windows: Vec<Window> = by_channel.values().flatten().cloned().collect();
        let window_len = windows.first().map_or(0, |w| w.values.len());
        if windows.iter().any(|w| w.values.len() != window_len) {
            return Err(DatasetError::Malformed("windows differ in length".into()));
        }
        Ok(Self {
            channels,
            window_len,
            windows,
        })
    }

    pub fn by_channel(&self) -> BTreeMap<String, Vec<Window>> {
        let mut out: BTreeMap<String, Vec<Window>> =
            self.channels.iter().map(|c| (c.clone(), Vec::new())).collect();
        for w in &self.windows {
            out.entry(w.channel_name.clone()).or_default().push(w.clone());
        }
        out
    }

    pub fn window_set(&self) -> Result<WindowSet, PipelineError> {
        WindowSet::from_channels(self.by_channel())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WINDOW_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_u32(&mut w, self.channels.len())?;
        for c in &self.channels {
            put_name(&mut w, c)?;
        }
        put_u32(&mut w, self.window_len)?;
        put_u32(&mut w, self.windows.len())?;
        for win in &self.windows {
            let id = self
                .channels
                .iter()
                .position(|c| *c == win.channel_name)
                .ok_or_else(|| DatasetError::Malformed(format!("unknown channel `{}`", win.channel_name)))?;
            if win.values.len() != self.window_len {
                return Err(DatasetError::Malformed("window length differs from header".into()));
            }
            put_u32(&mut w, id)?;
            w.write_all(&(win.start_index as u64).to_le_bytes())?;
            w.write_all(&[win.label])?;
            put_f32s(&mut w, win.values.iter().map(|&v| v as f32))?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        header(&mut r, WINDOW_MAGIC, "LSFD")?;
        let n_channels = get_u32(&mut r)?;
        let channels = (0..n_channels).map(|_| get_name(&mut r)).collect::<Result<Vec<_>>>()?;
        let window_len = get_u32(&mut r)?;
        let count = get_u32(&mut r)?;
        let mut windows = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id = get_u32(&mut r)?;
            let channel_name = channels
                .get(id)
                .cloned()
                .ok_or_else(|| DatasetError::Malformed(format!("channel id {id} out of range")))?;
            let start_index = u64::from_le_bytes(get(&mut r)?) as usize;
            let [label] = get::<1>(&mut r)?;
            let values = get_f32s(&mut r, window_len)?.into_iter().map(f64::from).collect();
            windows.push(Window {
                channel_name,
                start_index,
                values,
                label,
            });
        }
        expect_eof(&mut r)?;
        Ok(Self {
            channels,
            window_len,
            windows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}

/// Per-modality latents for a run of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub modalities: Vec<String>,
    pub shape: [usize; 3],
    pub starts: Vec<usize>,
    pub labels: Vec<u8>,
    pub latents: BTreeMap<String, Vec<Tensor<f32>>>,
}

impl LatentSet {
    pub fn new(
        modalities: Vec<String>,
        starts: Vec<usize>,
        labels: Vec<u8>,
        latents: BTreeMap<String, Vec<Tensor<f32>>>,
    ) -> Result<Self> {
        if starts.len() != labels.len() {
            return Err(DatasetError::Malformed("starts and labels differ in length".into()));
        }
        let first = modalities
            .first()
            .and_then(|m| latents.get(m))
            .and_then(|v| v.first())
            .ok_or_else(|| DatasetError::Malformed("no latents".into()))?;
        let shape: [usize; 3] = first
            .shape()
            .try_into()
            .map_err(|_| DatasetError::Malformed("latents must be rank 3".into()))?;
        for m in &modalities {
            let v = latents
                .get(m)
                .ok_or_else(|| DatasetError::Malformed(format!("no latents for `{m}`")))?;
            if v.len() != starts.len() || v.iter().any(|t| t.shape() != shape) {
                return Err(DatasetError::Malformed(format!("latents of `{m}` do not match")));
            }
        }
        Ok(Self {
            modalities,
            shape,
            starts,
            labels,
            latents,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(LATENT_MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_u32(&mut w, self.modalities.len())?;
        for m in &self.modalities {
            put_name(&mut w, m)?;
        }
        for d in self.shape {
            put_u32(&mut w, d)?;
        }
        put_u32(&mut w, self.len())?;
        for (&s, &l) in self.starts.iter().zip(&self.labels) {
            w.write_all(&(s as u64).to_le_bytes())?;
            w.write_all(&[l])?;
        }
        for m in &self.modalities {
            for t in &self.latents[m] {
                put_f32s(&mut w, t.data().iter().copied())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        header(&mut r, LATENT_MAGIC, "LSFL")?;
        let n = get_u32(&mut r)?;
        let modalities = (0..n).map(|_| get_name(&mut r)).collect::<Result<Vec<_>>>()?;
        let shape = [get_u32(&mut r)?, get_u32(&mut r)?, get_u32(&mut r)?];
        let count = get_u32(&mut r)?;
        let mut starts = Vec::with_capacity(count.min(1 << 16));
        let mut labels = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            starts.push(u64::from_le_bytes(get(&mut r)?) as usize);
            labels.push(get::<1>(&mut r)?[0]);
        }
        let elems = shape.iter().product();
        let mut latents = BTreeMap::new();
        for m in &modalities {
            let v = (0..count)
                .map(|_| {
                    Tensor::from_vec(shape.to_vec(), get_f32s(&mut r, elems)?)
                        .map_err(|e| DatasetError::Malformed(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            latents.insert(m.clone(), v);
        }
        expect_eof(&mut r)?;
        Self::new(modalities, starts, labels, latents)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}
