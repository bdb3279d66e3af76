//! Loading, gap repair, resampling and windowing of multimodal recordings.
//!
//! Input CSV layout: a header row starting with the timestamp column
//! (seconds, decimal), one column per signal, and optionally a `label`
//! column holding 0/1. Empty cells are missing samples. Optional `gender`,
//! `bmi` and `age` columns populate [`SubjectMeta`] from their first
//! non-empty value.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

/// Channel names of the three accelerometer axes; together they form the
/// `Acc` modality.
pub const ACC_AXES: [&str; 3] = ["AccX", "AccY", "AccZ"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_name}: missing header row")]
    MissingHeader { source_name: String },
    #[error("{source_name}: unknown column `{column}` (not in header)")]
    UnknownColumn { source_name: String, column: String },
    #[error("{source_name}: malformed row at line {line}: {reason}")]
    MalformedRow {
        source_name: String,
        line: u64,
        reason: String,
    },
    #[error("{source_name}: timestamp decreases at line {line}")]
    NonMonotoneTimestamp { source_name: String, line: u64 },
    #[error("{source_name}: no data rows")]
    Empty { source_name: String },
    #[error("cannot infer sampling rate: {0}")]
    UnknownRate(String),
    #[error("channel `{0}` has no non-missing samples")]
    AllMissing(String),
    #[error("channel `{0}` still has missing samples; forward-fill it first")]
    UnrepairedGaps(String),
    #[error("sampling rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("invalid window configuration: {0}")]
    InvalidWindowConfig(String),
    #[error("channel `{channel}` has {len} samples, fewer than one window of {window_len}")]
    TooShort {
        channel: String,
        len: usize,
        window_len: usize,
    },
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// One sampled signal; `None` marks a missing sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub rate_hz: f64,
    pub samples: Vec<Option<f64>>,
}

impl Channel {
    pub fn new(name: impl Into<String>, rate_hz: f64, samples: Vec<Option<f64>>) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(IngestError::NonPositiveRate(rate_hz));
        }
        Ok(Self {
            name: name.into(),
            rate_hz,
            samples,
        })
    }

    /// Convenience constructor for fully observed signals.
    pub fn from_values(name: impl Into<String>, rate_hz: f64, values: &[f64]) -> Result<Self> {
        Self::new(name, rate_hz, values.iter().copied().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.samples.iter().all(Option::is_some)
    }

    /// Dense values, if no sample is missing.
    pub fn values(&self) -> Option<Vec<f64>> {
        self.samples.iter().copied().collect()
    }

    fn dense(&self) -> Result<Vec<f64>> {
        self.values()
            .ok_or_else(|| IngestError::UnrepairedGaps(self.name.clone()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubjectMeta {
    /// 1 = male, 0 = female.
    pub gender: Option<u8>,
    pub bmi: Option<f64>,
    pub age: Option<f64>,
}

/// Piecewise-constant binary labels: each entry `(index, label)` holds from
/// `index` until the next entry. Indices before the first entry read as 0.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelTrack {
    entries: Vec<(usize, u8)>,
}

impl LabelTrack {
    pub fn new(mut entries: Vec<(usize, u8)>) -> Self {
        entries.sort_by_key(|e| e.0);
        entries.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 = later.1;
                true
            } else {
                false
            }
        });
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, u8)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_at(&self, index: usize) -> u8 {
        match self.entries.partition_point(|e| e.0 <= index) {
            0 => 0,
            n => self.entries[n - 1].1,
        }
    }

    /// Moves label boundaries onto a grid of another sampling rate.
    pub fn remap(&self, src_rate: f64, dst_rate: f64) -> Self {
        let ratio = dst_rate / src_rate;
        Self::new(
            self.entries
                .iter()
                .map(|&(i, l)| (((i as f64) * ratio).round() as usize, l))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalStream {
    channels: BTreeMap<String, Channel>,
    pub epoch: f64,
    pub subject: SubjectMeta,
    pub labels: LabelTrack,
}

impl MultimodalStream {
    pub fn new(channels: Vec<Channel>, epoch: f64, labels: LabelTrack) -> Result<Self> {
        let mut map = BTreeMap::new();
        for c in channels {
            if map.contains_key(&c.name) {
                return Err(IngestError::DuplicateChannel(c.name));
            }
            map.insert(c.name.clone(), c);
        }
        Ok(Self {
            channels: map,
            epoch,
            subject: SubjectMeta::default(),
            labels,
        })
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.get(name)
    }

    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.values()
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }
}

/// Which CSV columns to read and what to call them.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    /// `(csv column, channel name)` pairs.
    pub columns: Vec<(String, String)>,
    pub timestamp_column: String,
    pub label_column: Option<String>,
    /// Source sampling rate; inferred from the timestamps when absent.
    pub rate_hz: Option<f64>,
}

impl Schema {
    /// Every listed column becomes a channel of the same name.
    pub fn identity<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns
                .iter()
                .map(|c| (c.as_ref().to_string(), c.as_ref().to_string()))
                .collect(),
            timestamp_column: "timestamp".into(),
            label_column: None,
            rate_hz: None,
        }
    }

    pub fn with_label_column(mut self, name: &str) -> Self {
        self.label_column = Some(name.to_string());
        self
    }

    pub fn with_rate(mut self, rate_hz: f64) -> Self {
        self.rate_hz = Some(rate_hz);
        self
    }
}

pub fn load_stream(path: impl AsRef<Path>, schema: &Schema) -> Result<MultimodalStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_stream(file, schema, &path.display().to_string())
}

/// [`load_stream`] over any reader; `source_name` prefixes error messages.
pub fn read_stream(reader: impl Read, schema: &Schema, source_name: &str) -> Result<MultimodalStream> {
    let src = || source_name.to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            source_name: src(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(IngestError::MissingHeader {
            source_name: src(),
        });
    }
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::UnknownColumn {
                source_name: src(),
                column: name.to_string(),
            })
    };
    let ts_col = find(&schema.timestamp_column)?;
    let data_cols: Vec<usize> = schema
        .columns
        .iter()
        .map(|(c, _)| find(c))
        .collect::<Result<_>>()?;
    let label_col = schema.label_column.as_deref().map(find).transpose()?;
    let optional = |name: &str| header.iter().position(|h| h == name);
    let (gender_col, bmi_col, age_col) = (optional("gender"), optional("bmi"), optional("age"));

    let mut timestamps: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); data_cols.len()];
    let mut label_entries: Vec<(usize, u8)> = Vec::new();
    let mut subject = SubjectMeta::default();

    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            source_name: src(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let malformed = |reason: String| IngestError::MalformedRow {
            source_name: src(),
            line,
            reason,
        };
        let parse = |idx: usize| -> Result<Option<f64>> {
            let cell = record.get(idx).unwrap_or("");
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>()
                .map(Some)
                .map_err(|_| malformed(format!("`{cell}` in column `{}` is not a number", &header[idx])))
        };

        let ts = parse(ts_col)?.ok_or_else(|| malformed("empty timestamp".into()))?;
        if let Some(&prev) = timestamps.last() {
            if ts < prev {
                return Err(IngestError::NonMonotoneTimestamp {
                    source_name: src(),
                    line,
                });
            }
        }
        timestamps.push(ts);
        for (slot, &idx) in columns.iter_mut().zip(&data_cols) {
            slot.push(parse(idx)?);
        }
        if let Some(idx) = label_col {
            match record.get(idx).unwrap_or("") {
                "" => {}
                "0" => push_label(&mut label_entries, row, 0),
                "1" => push_label(&mut label_entries, row, 1),
                other => return Err(malformed(format!("label `{other}` is not 0 or 1"))),
            }
        }
        if subject.gender.is_none() {
            if let Some(cell) = gender_col.and_then(|i| record.get(i)).filter(|c| !c.is_empty()) {
                subject.gender = Some(encode_gender(cell).ok_or_else(|| {
                    malformed(format!("unrecognized gender `{cell}`"))
                })?);
            }
        }
        if subject.bmi.is_none() {
            subject.bmi = bmi_col.map(&parse).transpose()?.flatten();
        }
        if subject.age.is_none() {
            subject.age = age_col.map(&parse).transpose()?.flatten();
        }
    }

    if timestamps.is_empty() {
        return Err(IngestError::Empty {
            source_name: src(),
        });
    }
    let rate = match schema.rate_hz {
        Some(r) => r,
        None => infer_rate(&timestamps)?,
    };
    let channels = schema
        .columns
        .iter()
        .zip(columns)
        .map(|((_, name), samples)| Channel::new(name.clone(), rate, samples))
        .collect::<Result<Vec<_>>>()?;
    let mut stream = MultimodalStream::new(channels, timestamps[0], LabelTrack::new(label_entries))?;
    stream.subject = subject;
    Ok(stream)
}

fn push_label(entries: &mut Vec<(usize, u8)>, index: usize, label: u8) {
    if entries.last().map(|e| e.1) != Some(label) {
        entries.push((index, label));
    }
}

fn encode_gender(cell: &str) -> Option<u8> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "m" | "male" => Some(1),
        "0" | "f" | "female" => Some(0),
        _ => None,
    }
}

fn infer_rate(timestamps: &[f64]) -> Result<f64> {
    let n = timestamps.len();
    let span = timestamps[n - 1] - timestamps[0];
    if n < 2 || span <= 0.0 {
        return Err(IngestError::UnknownRate(
            "timestamps do not span a positive interval; set the rate explicitly".into(),
        ));
    }
    Ok((n - 1) as f64 / span)
}

/// Reads a separate label file with header `start_index,label`.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelTrack> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| IngestError::Open {
        path: name.clone(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            source_name: name.clone(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: &str| IngestError::MalformedRow {
            source_name: name.clone(),
            line,
            reason: reason.to_string(),
        };
        let index: usize = record
            .get(0)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad("start_index is not a non-negative integer"))?;
        let label = match record.get(1) {
            Some("0") => 0,
            Some("1") => 1,
            _ => return Err(bad("label is not 0 or 1")),
        };
        entries.push((index, label));
    }
    Ok(LabelTrack::new(entries))
}

/// Replaces each gap with the previous observed value; leading gaps take the
/// first observed value.
pub fn forward_fill(channel: &Channel) -> Result<Channel> {
    let first = channel
        .samples
        .iter()
        .flatten()
        .next()
        .copied()
        .ok_or_else(|| IngestError::AllMissing(channel.name.clone()))?;
    let mut last = first;
    let samples = channel
        .samples
        .iter()
        .map(|s| {
            if let Some(v) = s {
                last = *v;
            }
            Some(last)
        })
        .collect();
    Ok(Channel {
        name: channel.name.clone(),
        rate_hz: channel.rate_hz,
        samples,
    })
}

/// Linear interpolation onto a uniform grid at `target_rate` spanning the
/// same duration; grid points past the last input sample take its value.
pub fn resample_uniform(channel: &Channel, target_rate: f64) -> Result<Channel> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(IngestError::NonPositiveRate(target_rate));
    }
    let values = channel.dense()?;
    if values.is_empty() {
        return Ok(Channel::new(channel.name.clone(), target_rate, Vec::new())?);
    }
    let n = values.len();
    let ratio = channel.rate_hz / target_rate;
    let count = ((n - 1) as f64 * target_rate / channel.rate_hz + 1e-9).floor() as usize + 1;
    let samples = (0..count)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= n - 1 {
                return Some(values[n - 1]);
            }
            let frac = pos - i as f64;
            Some(if frac == 0.0 {
                values[i]
            } else {
                values[i] + (values[i + 1] - values[i]) * frac
            })
        })
        .collect();
    Channel::new(channel.name.clone(), target_rate, samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window_len: usize,
    pub stride: usize,
    /// Append a zero-padded window covering samples left after the last
    /// full window.
    pub zero_fill: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            stride: 96,
            zero_fill: true,
        }
    }
}

/// A fixed-length segment of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub channel_name: String,
    pub start_index: usize,
    pub values: Vec<f64>,
    pub label: u8,
}

/// Number of full windows: `floor((n − len)/stride) + 1`, or 0 if `n < len`.
pub fn full_window_count(n: usize, window_len: usize, stride: usize) -> usize {
    if n < window_len {
        0
    } else {
        (n - window_len) / stride + 1
    }
}

/// Segments a gap-free channel into windows at starts `0, stride, 2·stride, …`.
///
/// When `zero_fill` is set and samples remain after the last full window, a
/// tail window starting at the next stride position holds the remaining
/// samples followed by zeros. A window's label is the one active at its last
/// real sample.
pub fn slide_windows(channel: &Channel, labels: &LabelTrack, cfg: &WindowConfig) -> Result<Vec<Window>> {
    let WindowConfig {
        window_len,
        stride,
        zero_fill,
    } = *cfg;
    if window_len == 0 || stride == 0 || stride > window_len {
        return Err(IngestError::InvalidWindowConfig(format!(
            "need window_len ≥ 1 and 1 ≤ stride ≤ window_len, got len {window_len}, stride {stride}"
        )));
    }
    let values = channel.dense()?;
    let n = values.len();
    if n < window_len && !zero_fill {
        return Err(IngestError::TooShort {
            channel: channel.name.clone(),
            len: n,
            window_len,
        });
    }
    let full = full_window_count(n, window_len, stride);
    let mut windows: Vec<Window> = (0..full)
        .map(|k| {
            let start = k * stride;
            Window {
                channel_name: channel.name.clone(),
                start_index: start,
                values: values[start..start + window_len].to_vec(),
                label: labels.label_at(start + window_len - 1),
            }
        })
        .collect();
    let covered = if full == 0 {
        0
    } else {
        (full - 1) * stride + window_len
    };
    if zero_fill && covered < n {
        let start = full * stride;
        let mut tail = values[start..].to_vec();
        tail.resize(window_len, 0.0);
        windows.push(Window {
            channel_name: channel.name.clone(),
            start_index: start,
            values: tail,
            label: labels.label_at(n - 1),
        });
    }
    Ok(windows)
}

/// Full preprocessing of a stream: forward-fill, resample every channel to
/// `target_rate`, crop to the shortest channel, and window. Returns windows
/// grouped by channel name.
pub fn prepare_windows(
    stream: &MultimodalStream,
    target_rate: f64,
    cfg: &WindowConfig,
) -> Result<BTreeMap<String, Vec<Window>>> {
    let mut resampled = Vec::new();
    let mut src_rate = None;
    for c in stream.channels() {
        src_rate.get_or_insert(c.rate_hz);
        resampled.push(resample_uniform(&forward_fill(c)?, target_rate)?);
    }
    let min_len = resampled.iter().map(Channel::len).min().unwrap_or(0);
    let labels = match src_rate {
        Some(r) => stream.labels.remap(r, target_rate),
        None => stream.labels.clone(),
    };
    resampled
        .into_iter()
        .map(|mut c| {
            c.samples.truncate(min_len);
            let windows = slide_windows(&c, &labels, cfg)?;
            Ok((c.name, windows))
        })
        .collect()
}
