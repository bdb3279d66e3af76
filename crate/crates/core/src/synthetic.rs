//! Seeded generators for training and test data.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::ingest::{Channel, LabelTrack, MultimodalStream, Result as IngestResult};
use crate::nn::{seed_rng, SplitMix64, Tensor};
use crate::spectral::{IMAGE_CHANNELS, IMAGE_SIZE};

fn random_color(rng: &mut SplitMix64) -> [f64; 3] {
    [rng.next_f64(), rng.next_f64(), rng.next_f64()]
}

/// Generic RGB training images: even indices are linear color gradients,
/// odd indices sinusoidal stripes, each with random orientation and colors.
pub fn generic_images(count: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = seed_rng(seed);
    (0..count)
        .map(|i| {
            let a = random_color(&mut rng);
            let b = random_color(&mut rng);
            let theta = rng.uniform(0.0, 2.0 * PI);
            let (dx, dy) = (theta.cos(), theta.sin());
            let cycles = rng.uniform(1.0, 4.0);
            let phase = rng.uniform(0.0, 2.0 * PI);
            let n = IMAGE_SIZE as f64;
            let plane = IMAGE_SIZE * IMAGE_SIZE;
            Tensor::from_fn(&[IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], |idx| {
                let c = idx / plane;
                let (y, x) = ((idx % plane) / IMAGE_SIZE, idx % IMAGE_SIZE);
                let u = (x as f64 / n - 0.5) * dx + (y as f64 / n - 0.5) * dy;
                let t = if i % 2 == 0 {
                    (u / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0)
                } else {
                    0.5 + 0.5 * (2.0 * PI * cycles * u + phase).sin()
                };
                (a[c] * (1.0 - t) + b[c] * t) as f32
            })
        })
        .collect()
}

/// Two-class latent sequences: every element is `N(±shift/2, 1)` with the
/// sign set by the class, so the class means sit `shift` standard
/// deviations apart per element.
pub fn separable_sequences(
    count: usize,
    steps: usize,
    shape: &[usize],
    shift: f64,
    seed: u64,
) -> Vec<(Vec<Tensor<f32>>, u8)> {
    let mut rng = seed_rng(seed);
    (0..count)
        .map(|i| {
            let label = (i % 2) as u8;
            let mean = if label == 1 { shift / 2.0 } else { -shift / 2.0 };
            let seq = (0..steps)
                .map(|_| Tensor::from_fn(shape, |_| (mean + rng.normal()) as f32))
                .collect();
            (seq, label)
        })
        .collect()
}

/// Configuration of a synthetic labeled multimodal recording.
#[derive(Clone, Debug, PartialEq)]
pub struct StressStreamConfig {
    pub rate_hz: f64,
    /// Length of each constant-label segment, in samples.
    pub segment_len: usize,
    pub segments: usize,
    /// Amplitude of the class-dependent tone relative to the unit noise.
    pub signal_strength: f64,
    pub seed: u64,
    /// Adds a `Noise` channel carrying no class information.
    pub with_noise_channel: bool,
}

impl Default for StressStreamConfig {
    fn default() -> Self {
        Self {
            rate_hz: 64.0,
            segment_len: 1024,
            segments: 8,
            signal_strength: 1.0,
            seed: 0,
            with_noise_channel: false,
        }
    }
}

pub const NOISE_CHANNEL: &str = "Noise";

/// Per-channel base frequency (cycles per 64 samples) for the low-stress
/// class; the high-stress class shifts it up.
const CHANNEL_TONES: [(&str, f64); 8] = [
    ("ECG", 3.0),
    ("EMG", 9.0),
    ("EDA", 2.0),
    ("Temp", 1.0),
    ("Resp", 4.0),
    ("AccX", 6.0),
    ("AccY", 7.0),
    ("AccZ", 5.0),
];

/// A recording whose label alternates per segment (starting low) and where
/// every physiological channel carries the label as a shift of a dominant
/// tone's frequency, on top of white noise.
pub fn stress_stream(cfg: &StressStreamConfig) -> IngestResult<MultimodalStream> {
    let mut rng = seed_rng(cfg.seed);
    let n = cfg.segment_len * cfg.segments;
    let label_of = |i: usize| ((i / cfg.segment_len.max(1)) % 2) as u8;
    let mut channels = Vec::new();
    for (name, base) in CHANNEL_TONES {
        let mut ch_rng = rng.fork();
        let phase = ch_rng.uniform(0.0, 2.0 * PI);
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let cycles = if label_of(i) == 1 { base + 8.0 } else { base };
                let tone = (2.0 * PI * cycles * i as f64 / 64.0 + phase).sin();
                cfg.signal_strength * tone + ch_rng.normal()
            })
            .collect();
        channels.push(Channel::from_values(name, cfg.rate_hz, &values)?);
    }
    if cfg.with_noise_channel {
        let mut ch_rng = rng.fork();
        let values: Vec<f64> = (0..n).map(|_| ch_rng.normal()).collect();
        channels.push(Channel::from_values(NOISE_CHANNEL, cfg.rate_hz, &values)?);
    }
    let labels = LabelTrack::new(
        (0..cfg.segments)
            .map(|s| (s * cfg.segment_len, label_of(s * cfg.segment_len)))
            .collect(),
    );
    MultimodalStream::new(channels, 0.0, labels)
}

/// Class-balanced labeled images for supervised pretraining: generic
/// gradient/stripe images whose colors are drawn from `[0, 0.4]` for class 0
/// and `[0.6, 1]` for class 1.
pub fn labeled_images(count: usize, seed: u64) -> Vec<(Tensor<f32>, u8)> {
    generic_images(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, img)| {
            let label = (i % 2) as u8;
            let offset = if label == 1 { 0.6 } else { 0.0 };
            (img.map(|v| offset + 0.4 * v), label)
        })
        .collect()
}

/// Counts of each value in `labels`.
pub fn class_counts(labels: impl IntoIterator<Item = u8>) -> BTreeMap<u8, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l).or_insert(0) += 1;
    }
    out
}
