//! End-to-end wiring: windows → spectral images → latents → fused sequences
//! → classifier, for the shared-encoder system and the per-modality
//! baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::baseline::{BaselineError, ModalityEncoder};
use crate::costmodel::{pipeline_cost, CostConfig, CostError, EncodingStage, PipelineCost, PipelineShape};
use crate::fusion::{
    evaluate, fuse_tensors, train_classifier, ClassifierHead, EpochStats, FusedLatent, FusionError,
    HeadArch, HeadConfig, Metrics, SequenceSample, TrainConfig,
};
use crate::ingest::{prepare_windows, IngestError, MultimodalStream, Window, WindowConfig, ACC_AXES};
use crate::nn::{seed_rng, ParamStore, Tensor};
use crate::spectral::{
    spectral_image_multi, Colormap, SpectralConfig, SpectralError, SpectralImage, IMAGE_CHANNELS,
    IMAGE_SIZE,
};
use crate::vqvae::{VqError, VqVaeModel};

/// Modalities in the order the fusion permutations add them.
pub const MODALITY_ORDER: [&str; 6] = ["ECG", "EMG", "EDA", "Temp", "Resp", "Acc"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("permutation id must be 1–6, got {0}")]
    UnknownPermutation(usize),
    #[error("no encoder for modality `{0}`")]
    MissingEncoder(String),
    #[error("modality `{modality}` needs channel `{channel}`, which the stream lacks")]
    MissingChannel { modality: String, channel: String },
    #[error("modality `{0}` has no images")]
    MissingModality(String),
    #[error("windows are not index-aligned across channels")]
    Misaligned,
    #[error("too few windows ({windows}) for one sequence of {seq_len}")]
    TooFewWindows { windows: usize, seq_len: usize },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Modalities of permutation `id` (1–6): the first `id` of
/// [`MODALITY_ORDER`].
pub fn permutation(id: usize) -> Result<Vec<String>> {
    if !(1..=MODALITY_ORDER.len()).contains(&id) {
        return Err(PipelineError::UnknownPermutation(id));
    }
    Ok(MODALITY_ORDER[..id].iter().map(|s| s.to_string()).collect())
}

/// Stream channels making up a modality. `Acc` is the three axes; any other
/// name is a single channel of the same name.
pub fn modality_channels(modality: &str) -> Vec<String> {
    if modality == "Acc" {
        ACC_AXES.iter().map(|s| s.to_string()).collect()
    } else {
        vec![modality.to_string()]
    }
}

/// Windows of every channel with the shared per-window labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub starts: Vec<usize>,
    pub labels: Vec<u8>,
    pub by_channel: BTreeMap<String, Vec<Window>>,
}

impl WindowSet {
    pub fn from_channels(by_channel: BTreeMap<String, Vec<Window>>) -> Result<Self> {
        let reference = by_channel.values().next().cloned().unwrap_or_default();
        let starts: Vec<usize> = reference.iter().map(|w| w.start_index).collect();
        let labels: Vec<u8> = reference.iter().map(|w| w.label).collect();
        for ws in by_channel.values() {
            if ws.len() != starts.len() || ws.iter().zip(&starts).any(|(w, &s)| w.start_index != s) {
                return Err(PipelineError::Misaligned);
            }
        }
        Ok(Self {
            starts,
            labels,
            by_channel,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

pub fn window_set(stream: &MultimodalStream, rate_hz: f64, cfg: &WindowConfig) -> Result<WindowSet> {
    WindowSet::from_channels(prepare_windows(stream, rate_hz, cfg)?)
}

/// One spectral image per window for `modality`, in window order.
pub fn modality_images(
    set: &WindowSet,
    modality: &str,
    cfg: &SpectralConfig,
    colormap: &Colormap,
) -> Result<Vec<SpectralImage>> {
    let channels: Vec<&Vec<Window>> = modality_channels(modality)
        .into_iter()
        .map(|c| {
            set.by_channel.get(&c).ok_or(PipelineError::MissingChannel {
                modality: modality.to_string(),
                channel: c,
            })
        })
        .collect::<Result<_>>()?;
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let windows: Vec<&Window> = channels.iter().map(|ws| &ws[i]).collect();
            Ok(spectral_image_multi(&windows, modality, cfg, colormap)?)
        })
        .collect()
}

pub fn images_for(
    set: &WindowSet,
    modalities: &[String],
    cfg: &SpectralConfig,
    colormap: &Colormap,
) -> Result<BTreeMap<String, Vec<SpectralImage>>> {
    modalities
        .iter()
        .map(|m| Ok((m.clone(), modality_images(set, m, cfg, colormap)?)))
        .collect()
}

/// Anything that turns a modality's spectral image into a `D×16×16` latent.
pub trait LatentEncoder: Sync {
    fn encode(&self, modality: &str, image: &SpectralImage) -> Result<Tensor<f32>>;

    /// The parameter store that serves `modality`.
    fn weights_for(&self, modality: &str) -> Result<&ParamStore<f32>>;

    fn embedding_dim(&self) -> usize;
}

impl LatentEncoder for VqVaeModel {
    fn encode(&self, _modality: &str, image: &SpectralImage) -> Result<Tensor<f32>> {
        Ok(self.latent(image)?.quantized)
    }

    fn weights_for(&self, _modality: &str) -> Result<&ParamStore<f32>> {
        Ok(self.params())
    }

    fn embedding_dim(&self) -> usize {
        VqVaeModel::embedding_dim(self)
    }
}

/// Spliced per-modality encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineEncoders {
    encoders: BTreeMap<String, ModalityEncoder>,
    embedding_dim: usize,
}

impl BaselineEncoders {
    pub fn new(encoders: impl IntoIterator<Item = ModalityEncoder>) -> Result<Self> {
        let encoders: BTreeMap<String, ModalityEncoder> = encoders
            .into_iter()
            .map(|e| (e.modality().to_string(), e.splice()))
            .collect();
        let embedding_dim = encoders.values().next().map_or(0, ModalityEncoder::embedding_dim);
        if let Some(bad) = encoders.values().find(|e| e.embedding_dim() != embedding_dim) {
            return Err(FusionError::DimMismatch {
                modality: bad.modality().to_string(),
                expected: vec![embedding_dim],
                found: vec![bad.embedding_dim()],
            }
            .into());
        }
        Ok(Self {
            encoders,
            embedding_dim,
        })
    }

    /// Untrained encoders, one per modality, seeded per position.
    pub fn untrained(modalities: &[String], d: usize, seed: u64) -> Result<Self> {
        let encs = modalities
            .iter()
            .enumerate()
            .map(|(i, m)| ModalityEncoder::new(m, d, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(encs)
    }

    pub fn get(&self, modality: &str) -> Result<&ModalityEncoder> {
        self.encoders
            .get(modality)
            .ok_or_else(|| PipelineError::MissingEncoder(modality.to_string()))
    }

    pub fn modalities(&self) -> impl Iterator<Item = &str> {
        self.encoders.keys().map(String::as_str)
    }
}

impl LatentEncoder for BaselineEncoders {
    fn encode(&self, modality: &str, image: &SpectralImage) -> Result<Tensor<f32>> {
        Ok(self.get(modality)?.features(image.pixels())?)
    }

    fn weights_for(&self, modality: &str) -> Result<&ParamStore<f32>> {
        Ok(self.get(modality)?.params())
    }

    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }
}

/// Distinct parameter stores the encoding stage of `order` touches.
pub fn encoder_loads(enc: &dyn LatentEncoder, order: &[String]) -> Result<usize> {
    let mut seen = BTreeSet::new();
    for m in order {
        seen.insert(enc.weights_for(m)? as *const ParamStore<f32> as usize);
    }
    Ok(seen.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedModalities {
    pub latents: BTreeMap<String, Vec<Tensor<f32>>>,
    pub encoder_loads: usize,
}

/// Encodes every image of every modality in `order`.
pub fn encode_modalities(
    enc: &dyn LatentEncoder,
    images: &BTreeMap<String, Vec<SpectralImage>>,
    order: &[String],
) -> Result<EncodedModalities> {
    let encoder_loads = encoder_loads(enc, order)?;
    let mut latents = BTreeMap::new();
    for m in order {
        let imgs = images
            .get(m)
            .ok_or_else(|| PipelineError::MissingModality(m.clone()))?;
        let codes: Vec<Tensor<f32>> = imgs
            .par_iter()
            .map(|img| enc.encode(m, img))
            .collect::<Result<_>>()?;
        latents.insert(m.clone(), codes);
    }
    Ok(EncodedModalities {
        latents,
        encoder_loads,
    })
}

/// Fuses window `i` of every modality in `order`, for every window.
pub fn fuse_windows(latents: &BTreeMap<String, Vec<Tensor<f32>>>, order: &[String]) -> Result<Vec<FusedLatent>> {
    let count = order
        .iter()
        .map(|m| {
            latents
                .get(m)
                .map(Vec::len)
                .ok_or_else(|| PipelineError::MissingModality(m.clone()))
        })
        .collect::<Result<BTreeSet<_>>>()?;
    let &n = match count.len() {
        1 => count.iter().next().expect("one count"),
        _ => return Err(PipelineError::Misaligned),
    };
    (0..n)
        .map(|i| {
            let map: BTreeMap<String, &Tensor<f32>> =
                order.iter().map(|m| (m.clone(), &latents[m][i])).collect();
            Ok(fuse_tensors(&map, order)?)
        })
        .collect()
}

/// Groups of `seq_len` consecutive windows starting every `stride` windows,
/// labeled by their final window.
pub fn build_sequences(fused: &[FusedLatent], labels: &[u8], seq_len: usize, stride: usize) -> Result<Vec<SequenceSample>> {
    if fused.len() < seq_len || seq_len == 0 {
        return Err(PipelineError::TooFewWindows {
            windows: fused.len(),
            seq_len,
        });
    }
    Ok((0..=fused.len() - seq_len)
        .step_by(stride.max(1))
        .map(|s| SequenceSample {
            steps: fused[s..s + seq_len].to_vec(),
            label: labels[s + seq_len - 1],
        })
        .collect())
}

/// Seeded shuffle, then the first `1 − test_fraction` for training.
pub fn split_samples<T: Clone>(samples: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    seed_rng(seed).shuffle(&mut idx);
    let n_test = ((samples.len() as f64) * test_fraction).round() as usize;
    let (test, train) = idx.split_at(n_test.min(samples.len()));
    (
        train.iter().map(|&i| samples[i].clone()).collect(),
        test.iter().map(|&i| samples[i].clone()).collect(),
    )
}

pub fn head_config(modalities: usize, d: usize, seq_len: usize) -> HeadConfig {
    HeadConfig::new(modalities * d, seq_len)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seq_len: usize,
    pub seq_stride: usize,
    pub test_fraction: f64,
    pub train: TrainConfig,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seq_len: 8,
            seq_stride: 8,
            test_fraction: 0.3,
            train: TrainConfig::default(),
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub modalities: Vec<String>,
    pub encoder_loads: usize,
    pub head: ClassifierHead,
    pub curve: Vec<EpochStats>,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
}

/// Fuses the given modality order from precomputed latents, trains a head
/// on a seeded split and evaluates it on the held-out part.
pub fn fit_and_evaluate(
    encoded: &EncodedModalities,
    labels: &[u8],
    order: &[String],
    d: usize,
    cfg: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let fused = fuse_windows(&encoded.latents, order)?;
    let samples = build_sequences(&fused, labels, cfg.seq_len, cfg.seq_stride)?;
    let (train, test) = split_samples(&samples, cfg.test_fraction, cfg.train.seed);
    let (head, curve) = train_classifier(&train, head_config(order.len(), d, cfg.seq_len), &cfg.train)?;
    let train_metrics = evaluate(&head, &train, cfg.threshold)?;
    let test_metrics = if test.is_empty() {
        train_metrics
    } else {
        evaluate(&head, &test, cfg.threshold)?
    };
    Ok(ExperimentResult {
        modalities: order.to_vec(),
        encoder_loads: encoded.encoder_loads,
        head,
        curve,
        train_metrics,
        test_metrics,
    })
}

/// Cost-model input for `order`.
pub fn pipeline_shape(order: &[String], seq_len: usize, window_len: usize, spectral: &SpectralConfig) -> PipelineShape {
    PipelineShape {
        modalities: order.to_vec(),
        channels_per_modality: order.iter().map(|m| modality_channels(m).len()).collect(),
        seq_len,
        window_len,
        stft: spectral.stft,
        image_shape: [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE],
    }
}

pub fn unified_cost(model: &VqVaeModel, shape: &PipelineShape, cfg: &CostConfig) -> Result<PipelineCost> {
    let head = HeadArch::new(head_config(shape.modalities.len(), model.embedding_dim(), shape.seq_len))?;
    let stage = EncodingStage::Shared {
        encoder: model.encoder(),
        codebook: (model.codebook_size(), model.embedding_dim()),
    };
    Ok(pipeline_cost(stage, shape, &head, cfg)?)
}

pub fn baseline_cost(encoders: &BaselineEncoders, shape: &PipelineShape, cfg: &CostConfig) -> Result<PipelineCost> {
    let head = HeadArch::new(head_config(shape.modalities.len(), encoders.embedding_dim, shape.seq_len))?;
    let stacks: Vec<&crate::nn::Sequential> = shape
        .modalities
        .iter()
        .map(|m| Ok(encoders.get(m)?.encoder()))
        .collect::<Result<_>>()?;
    Ok(pipeline_cost(EncodingStage::PerModality { encoders: &stacks }, shape, &head, cfg)?)
}

/// Wall-clock seconds to encode one image per modality in `order`, run
/// sequentially, after one discarded warm-up pass.
pub fn time_encoding(
    enc: &dyn LatentEncoder,
    images: &BTreeMap<String, SpectralImage>,
    order: &[String],
    repeats: usize,
) -> Result<Vec<f64>> {
    let run = || -> Result<()> {
        for m in order {
            let img = images
                .get(m)
                .ok_or_else(|| PipelineError::MissingModality(m.clone()))?;
            std::hint::black_box(enc.encode(m, img)?);
        }
        Ok(())
    };
    run()?;
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            run()?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
