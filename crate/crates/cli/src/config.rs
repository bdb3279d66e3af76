//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys and unparsable values are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use lsf_core::baseline::PretrainConfig;
use lsf_core::costmodel::CostConfig;
use lsf_core::fusion::TrainConfig;
use lsf_core::ingest::WindowConfig;
use lsf_core::pipeline::{permutation, ExperimentConfig};
use lsf_core::spectral::{SpectralConfig, StftConfig, Taper};
use lsf_core::synthetic::StressStreamConfig;
use lsf_core::vqvae::VqConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: expected `key = value`")]
    Syntax { source_name: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // ingest
    pub columns: Vec<String>,
    pub timestamp_column: String,
    pub label_column: String,
    pub source_rate_hz: Option<f64>,
    pub rate_hz: f64,
    pub window_len: usize,
    pub stride: usize,
    pub zero_fill: bool,
    // spectral
    pub frame_len: usize,
    pub hop: usize,
    pub taper: Taper,
    pub floor_db: f64,
    // unified encoder
    pub k: usize,
    pub d: usize,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub dead_code_steps: usize,
    pub train_images: usize,
    // classifier
    pub head_lr: f64,
    pub epochs: usize,
    pub head_batch: usize,
    pub l: usize,
    pub seq_stride: usize,
    pub test_fraction: f64,
    pub threshold: f64,
    pub modalities: Vec<String>,
    // baseline
    pub pretrain_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    // synthetic stream
    pub segments: usize,
    pub segment_len: usize,
    pub signal_strength: f64,
    // cost
    pub energy_per_mac_pj: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = WindowConfig::default();
        let s = SpectralConfig::default();
        let vq = VqConfig::default();
        let t = TrainConfig::default();
        let p = PretrainConfig::default();
        Self {
            seed: 0,
            columns: ["ECG", "EMG", "EDA", "Temp", "Resp", "AccX", "AccY", "AccZ"]
                .map(String::from)
                .to_vec(),
            timestamp_column: "timestamp".into(),
            label_column: "label".into(),
            source_rate_hz: None,
            rate_hz: 64.0,
            window_len: w.window_len,
            stride: w.stride,
            zero_fill: w.zero_fill,
            frame_len: s.stft.frame_len,
            hop: s.stft.hop,
            taper: s.stft.taper,
            floor_db: s.floor_db,
            k: vq.codebook_size,
            d: vq.embedding_dim,
            beta: vq.beta,
            lr: vq.lr,
            steps: vq.steps,
            batch: vq.batch,
            dead_code_steps: vq.dead_code_steps,
            train_images: 64,
            head_lr: t.lr,
            epochs: t.epochs,
            head_batch: t.batch,
            l: 8,
            seq_stride: 8,
            test_fraction: 0.3,
            threshold: 0.5,
            modalities: permutation(6).expect("six modalities"),
            pretrain_samples: p.samples,
            pretrain_epochs: p.epochs,
            pretrain_lr: p.lr,
            pretrain_batch: p.batch,
            segments: 24,
            segment_len: 1024,
            signal_strength: 1.0,
            energy_per_mac_pj: 4.6,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn join(v: &[String]) -> String {
    v.join(",")
}

impl RunConfig {
    pub fn parse_str(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                source_name: source_name.into(),
                line: i + 1,
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "columns" => self.columns = list(v),
            "timestamp_column" => self.timestamp_column = v.into(),
            "label_column" => self.label_column = v.into(),
            "source_rate_hz" => {
                self.source_rate_hz = match v {
                    "" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "rate_hz" => self.rate_hz = parse(key, v)?,
            "window_len" => self.window_len = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "zero_fill" => self.zero_fill = parse(key, v)?,
            "frame_len" => self.frame_len = parse(key, v)?,
            "hop" => self.hop = parse(key, v)?,
            "taper" => self.taper = parse(key, v)?,
            "floor_db" => self.floor_db = parse(key, v)?,
            "K" => self.k = parse(key, v)?,
            "D" => self.d = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "dead_code_steps" => self.dead_code_steps = parse(key, v)?,
            "train_images" => self.train_images = parse(key, v)?,
            "head_lr" => self.head_lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "head_batch" => self.head_batch = parse(key, v)?,
            "L" => self.l = parse(key, v)?,
            "seq_stride" => self.seq_stride = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "permutation" => {
                let id: usize = parse(key, v)?;
                self.modalities = permutation(id).map_err(|e| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })?;
            }
            "modalities" => self.modalities = list(v),
            "pretrain_samples" => self.pretrain_samples = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, v)?,
            "segments" => self.segments = parse(key, v)?,
            "segment_len" => self.segment_len = parse(key, v)?,
            "signal_strength" => self.signal_strength = parse(key, v)?,
            "energy_per_mac_pj" => self.energy_per_mac_pj = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, value: String, reason: &str| ConfigError::BadValue {
            key: key.into(),
            value,
            reason: reason.into(),
        };
        if self.modalities.is_empty() {
            return Err(bad("modalities", String::new(), "at least one modality is required"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(bad("test_fraction", self.test_fraction.to_string(), "must be in [0, 1)"));
        }
        if self.l == 0 {
            return Err(bad("L", "0".into(), "must be positive"));
        }
        if self.k < 2 {
            return Err(bad("K", self.k.to_string(), "must be at least 2"));
        }
        Ok(())
    }

    /// Every key with its resolved value, in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("columns", join(&self.columns)),
            ("timestamp_column", self.timestamp_column.clone()),
            ("label_column", self.label_column.clone()),
            ("source_rate_hz", self.source_rate_hz.map_or("auto".into(), |r| r.to_string())),
            ("rate_hz", self.rate_hz.to_string()),
            ("window_len", self.window_len.to_string()),
            ("stride", self.stride.to_string()),
            ("zero_fill", self.zero_fill.to_string()),
            ("frame_len", self.frame_len.to_string()),
            ("hop", self.hop.to_string()),
            ("taper", self.taper.to_string()),
            ("floor_db", self.floor_db.to_string()),
            ("K", self.k.to_string()),
            ("D", self.d.to_string()),
            ("beta", self.beta.to_string()),
            ("lr", self.lr.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("dead_code_steps", self.dead_code_steps.to_string()),
            ("train_images", self.train_images.to_string()),
            ("head_lr", self.head_lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("head_batch", self.head_batch.to_string()),
            ("L", self.l.to_string()),
            ("seq_stride", self.seq_stride.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("threshold", self.threshold.to_string()),
            ("modalities", join(&self.modalities)),
            ("pretrain_samples", self.pretrain_samples.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("pretrain_batch", self.pretrain_batch.to_string()),
            ("segments", self.segments.to_string()),
            ("segment_len", self.segment_len.to_string()),
            ("signal_strength", self.signal_strength.to_string()),
            ("energy_per_mac_pj", self.energy_per_mac_pj.to_string()),
        ]
    }

    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window_len: self.window_len,
            stride: self.stride,
            zero_fill: self.zero_fill,
        }
    }

    pub fn spectral(&self) -> SpectralConfig {
        SpectralConfig {
            stft: StftConfig {
                frame_len: self.frame_len,
                hop: self.hop,
                taper: self.taper,
            },
            floor_db: self.floor_db,
        }
    }

    pub fn vq(&self) -> VqConfig {
        VqConfig {
            codebook_size: self.k,
            embedding_dim: self.d,
            beta: self.beta,
            lr: self.lr,
            steps: self.steps,
            batch: self.batch,
            seed: self.seed,
            dead_code_steps: self.dead_code_steps,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seq_len: self.l,
            seq_stride: self.seq_stride,
            test_fraction: self.test_fraction,
            train: TrainConfig {
                lr: self.head_lr,
                epochs: self.epochs,
                batch: self.head_batch,
                seed: self.seed,
            },
            threshold: self.threshold,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            samples: self.pretrain_samples,
            embedding_dim: self.d,
            lr: self.pretrain_lr,
            epochs: self.pretrain_epochs,
            batch: self.pretrain_batch,
            seed: self.seed,
        }
    }

    pub fn stream(&self, with_noise_channel: bool) -> StressStreamConfig {
        StressStreamConfig {
            rate_hz: self.rate_hz,
            segment_len: self.segment_len,
            segments: self.segments,
            signal_strength: self.signal_strength,
            seed: self.seed,
            with_noise_channel,
        }
    }

    pub fn cost(&self) -> CostConfig {
        CostConfig {
            energy_per_mac_j: self.energy_per_mac_pj * 1e-12,
            ..CostConfig::default()
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse_str("# comment\n\nseed = 7\nK=8\npermutation = 2\n", "t").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.k, 8);
        assert_eq!(cfg.modalities, ["ECG", "EMG"]);
        assert_eq!(cfg.d, 16);
    }

    #[test]
    fn display_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("taper", "rect").unwrap();
        cfg.set("source_rate_hz", "128").unwrap();
        cfg.set("modalities", "ECG, Acc").unwrap();
        let back = RunConfig::parse_str(&cfg.to_string(), "t").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert_eq!(
            RunConfig::parse_str("sed = 1", "t"),
            Err(ConfigError::UnknownKey("sed".into()))
        );
        assert!(matches!(
            RunConfig::parse_str("steps = many", "t"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse_str("permutation = 9", "t"),
            Err(ConfigError::BadValue { .. })
        ));
        assert_eq!(
            RunConfig::parse_str("seed 1", "cfg.txt"),
            Err(ConfigError::Syntax {
                source_name: "cfg.txt".into(),
                line: 1
            })
        );
        assert!(RunConfig::parse_str("test_fraction = 1.5", "t").is_err());
    }
}
