//! Per-modality residual encoders for the comparison system.
//!
//! Each encoder maps 3×128×128 to D×16×16 like the shared encoder:
//!
//! ```text
//! stem   conv 3→16  k3 s2 p1, relu          128 → 64
//! stage1 3 × basic residual block at 16
//! down   conv 16→32 k3 s2 p1, relu          64 → 32
//! stage2 4 × basic residual block at 32
//! proj   conv 32→D  k3 s2 p1                32 → 16
//! ```
//!
//! A basic block is `x + conv3×3(relu(conv3×3(relu(x))))`. The stage depths
//! follow the first two stages of a 34-layer residual network. During
//! pretraining a tail of global average pooling and a dense layer to two
//! logits is attached; splicing drops it.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::fusion::EpochStats;
use crate::nn::{
    seed_rng, AdamConfig, Gradients, KernelError, Layer, ParamStore, Real, Sequential, Tensor,
};
use crate::spectral::{IMAGE_CHANNELS, IMAGE_SIZE};
use crate::vqvae::LATENT_SIZE;
use crate::weights::{self, WeightsError};

pub const STAGE_DEPTHS: [usize; 2] = [3, 4];
pub const STAGE_WIDTHS: [usize; 2] = [16, 32];

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("pretraining set for `{modality}` contains only class {class}")]
    SingleClass { modality: String, class: u8 },
    #[error("pretraining set for `{0}` is empty")]
    EmptyDataset(String),
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error("image shape {0:?} is not 3×128×128")]
    BadImage(Vec<usize>),
    #[error("encoder `{0}` has no classifier tail")]
    NoTail(String),
    #[error("non-finite loss for `{modality}` in epoch {epoch}")]
    NonFiniteLoss { modality: String, epoch: usize },
    #[error("weight file does not describe a `{modality}` encoder: {reason}")]
    WrongModel { modality: String, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// Encoder stack for one modality; every parameter name starts with
/// `{modality}.`.
pub fn encoder_stack(modality: &str, d: usize) -> Sequential {
    let [w1, w2] = STAGE_WIDTHS;
    let mut layers = vec![
        Layer::conv2d(&format!("{modality}.stem"), IMAGE_CHANNELS, w1, 3, 2, 1),
        Layer::relu(&format!("{modality}.stem_relu")),
    ];
    for i in 0..STAGE_DEPTHS[0] {
        layers.push(Layer::residual(&format!("{modality}.stage1.block{i}"), w1, w1, 3));
    }
    layers.push(Layer::conv2d(&format!("{modality}.down"), w1, w2, 3, 2, 1));
    layers.push(Layer::relu(&format!("{modality}.down_relu")));
    for i in 0..STAGE_DEPTHS[1] {
        layers.push(Layer::residual(&format!("{modality}.stage2.block{i}"), w2, w2, 3));
    }
    layers.push(Layer::conv2d(&format!("{modality}.proj"), w2, d, 3, 2, 1));
    Sequential::new(layers)
}

fn tail_layer(modality: &str, d: usize) -> Layer {
    Layer::dense(&format!("{modality}.tail.fc"), d, 2)
}

fn image_shape() -> [usize; 3] {
    [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE]
}

/// Mean over the spatial axes of a `C×H×W` tensor.
fn global_average_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.shape()[0];
    let plane = x.len() / c;
    let inv = 1.0 / plane as f64;
    Tensor::from_fn(&[c], |i| {
        let s: f64 = x.data()[i * plane..(i + 1) * plane].iter().map(|v| v.as_f64()).sum();
        T::of(s * inv)
    })
}

fn global_average_pool_backward<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let plane: usize = shape[1..].iter().product();
    let inv = 1.0 / plane as f64;
    Tensor::from_fn(shape, |i| T::of(g.data()[i / plane].as_f64() * inv))
}

/// Softmax cross-entropy of two logits and its gradient.
pub fn cross_entropy(logits: &[f64; 2], label: u8) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    let p = [e[0] / z, e[1] / z];
    let y = label as usize;
    let loss = -(p[y].max(f64::MIN_POSITIVE)).ln();
    let mut g = p;
    g[y] -= 1.0;
    (loss, g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityEncoder {
    modality: String,
    embedding_dim: usize,
    encoder: Sequential,
    tail: Option<Layer>,
    params: ParamStore<f32>,
    frozen: bool,
}

impl ModalityEncoder {
    /// Seeded, untrained encoder with its tail.
    pub fn new(modality: &str, embedding_dim: usize, seed: u64) -> Result<Self> {
        if embedding_dim == 0 {
            return Err(BaselineError::InvalidConfig("D must be ≥ 1".into()));
        }
        let encoder = encoder_stack(modality, embedding_dim);
        let tail = tail_layer(modality, embedding_dim);
        let mut params = ParamStore::new();
        let mut rng = seed_rng(seed);
        encoder.init_params(&mut params, &mut rng);
        tail.init_params(&mut params, &mut rng);
        let out = encoder.output_shape(&image_shape())?;
        assert_eq!(
            out,
            [embedding_dim, LATENT_SIZE, LATENT_SIZE],
            "baseline features must match the shared latent shape"
        );
        Ok(Self {
            modality: modality.to_string(),
            embedding_dim,
            encoder,
            tail: Some(tail),
            params,
            frozen: false,
        })
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn has_tail(&self) -> bool {
        self.tail.is_some()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Parameters of the feature layers alone.
    pub fn feature_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    /// Feature extractor: tail removed, parameters frozen.
    pub fn splice(&self) -> Self {
        let mut out = self.clone();
        if let Some(tail) = out.tail.take() {
            for (name, _) in tail.param_shapes() {
                out.params.remove(&name);
            }
        }
        out.frozen = true;
        out
    }

    /// `D×16×16` features.
    pub fn features(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        if image.shape() != image_shape() {
            return Err(BaselineError::BadImage(image.shape().to_vec()));
        }
        Ok(self.encoder.infer(&self.params, image)?)
    }

    /// Tail logits for one image.
    pub fn logits(&self, image: &Tensor<f32>) -> Result<[f64; 2]> {
        let tail = self
            .tail
            .as_ref()
            .ok_or_else(|| BaselineError::NoTail(self.modality.clone()))?;
        let pooled = global_average_pool(&self.features(image)?);
        let out = tail.forward(&self.params, &pooled)?.0;
        Ok([out.data()[0] as f64, out.data()[1] as f64])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(weights::save_store(&self.params, path)?)
    }

    /// Loads a frozen encoder; the tail is present iff its weights are.
    pub fn load(modality: &str, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(modality, weights::load_store(path)?)
    }

    pub fn from_store(modality: &str, params: ParamStore<f32>) -> Result<Self> {
        let wrong = |reason: String| BaselineError::WrongModel {
            modality: modality.to_string(),
            reason,
        };
        let proj = params
            .get(&format!("{modality}.proj.weight"))
            .map_err(|_| wrong("no projection weight".into()))?;
        let d = proj.shape()[0];
        let encoder = encoder_stack(modality, d);
        let tail = tail_layer(modality, d);
        let check = |layers: &[Layer]| -> Result<bool> {
            let mut all = true;
            for l in layers {
                for (name, shape) in l.param_shapes() {
                    match params.get(&name) {
                        Ok(t) if t.shape() == shape.as_slice() => {}
                        Ok(t) => return Err(wrong(format!("`{name}` has shape {:?}", t.shape()))),
                        Err(_) => all = false,
                    }
                }
            }
            Ok(all)
        };
        if !check(encoder.layers())? {
            return Err(wrong("feature weights incomplete".into()));
        }
        let has_tail = check(std::slice::from_ref(&tail))?;
        let expected = encoder.param_count() + if has_tail { tail.param_count() } else { 0 };
        if params.num_elements() != expected {
            return Err(wrong("unexpected extra tensors".into()));
        }
        Ok(Self {
            modality: modality.to_string(),
            embedding_dim: d,
            encoder,
            tail: has_tail.then_some(tail),
            params,
            frozen: true,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    /// Number of labeled images to train on.
    pub samples: usize,
    pub embedding_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            embedding_dim: 16,
            lr: 1e-3,
            epochs: 5,
            batch: 16,
            seed: 0,
        }
    }
}

/// The first `n` indices of a seeded shuffle of `0..available`.
pub fn pretraining_subset(available: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..available).collect();
    seed_rng(seed).shuffle(&mut idx);
    idx.truncate(n);
    idx
}

/// Per-sample loss, correctness and gradients through encoder and tail.
pub fn sample_gradients<T: Real>(
    encoder: &Sequential,
    tail: &Layer,
    params: &ParamStore<T>,
    image: &Tensor<T>,
    label: u8,
) -> Result<(f64, bool, Gradients<T>)> {
    let (feat, caches) = encoder.forward(params, image)?;
    let pooled = global_average_pool(&feat);
    let (out, tail_cache) = tail.forward(params, &pooled)?;
    let logits = [out.data()[0].as_f64(), out.data()[1].as_f64()];
    let (loss, g) = cross_entropy(&logits, label);
    let mut grads = Gradients::new();
    let g_out = Tensor::from_vec(vec![2], vec![T::of(g[0]), T::of(g[1])])?;
    let g_pooled = tail.backward(params, &tail_cache, &g_out, &mut grads)?;
    let g_feat = global_average_pool_backward(&g_pooled, feat.shape());
    encoder.backward(params, &caches, &g_feat, &mut grads)?;
    let predicted = u8::from(logits[1] > logits[0]);
    Ok((loss, predicted == label, grads))
}

/// Supervised pretraining with the tail attached.
pub fn pretrain_encoder(
    modality: &str,
    images: &[(Tensor<f32>, u8)],
    cfg: &PretrainConfig,
) -> Result<(ModalityEncoder, Vec<EpochStats>)> {
    if images.is_empty() {
        return Err(BaselineError::EmptyDataset(modality.to_string()));
    }
    if cfg.batch == 0 {
        return Err(BaselineError::InvalidConfig("batch must be ≥ 1".into()));
    }
    if images.len() < cfg.samples {
        log::warn!(
            "`{modality}`: {} labeled images available, fewer than the requested {}",
            images.len(),
            cfg.samples
        );
    }
    let subset = pretraining_subset(images.len(), cfg.samples, cfg.seed);
    for &i in &subset {
        let (img, label) = &images[i];
        if *label > 1 {
            return Err(BaselineError::BadLabel(*label));
        }
        if img.shape() != image_shape() {
            return Err(BaselineError::BadImage(img.shape().to_vec()));
        }
    }
    let first = images[subset[0]].1;
    if subset.iter().all(|&i| images[i].1 == first) {
        return Err(BaselineError::SingleClass {
            modality: modality.to_string(),
            class: first,
        });
    }

    let mut enc = ModalityEncoder::new(modality, cfg.embedding_dim, cfg.seed)?;
    let tail = enc.tail.clone().expect("fresh encoder has a tail");
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = seed_rng(cfg.seed).fork();
    let mut order = subset;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let results: Vec<(f64, bool, Gradients<f32>)> = chunk
                .par_iter()
                .map(|&i| sample_gradients(&enc.encoder, &tail, &enc.params, &images[i].0, images[i].1))
                .collect::<Result<_>>()?;
            let mut grads = Gradients::new();
            for (l, ok, g) in &results {
                loss_sum += l;
                correct += usize::from(*ok);
                grads.merge(g)?;
            }
            grads.scale(1.0 / chunk.len() as f32);
            enc.params.accumulate(&grads)?;
            t += 1;
            enc.params.adam_step(&adam, t).map_err(|e| match e {
                KernelError::NonFiniteGradient { .. } => BaselineError::NonFiniteLoss {
                    modality: modality.to_string(),
                    epoch,
                },
                other => other.into(),
            })?;
        }
        let loss = loss_sum / order.len() as f64;
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss {
                modality: modality.to_string(),
                epoch,
            });
        }
        let accuracy = correct as f64 / order.len() as f64;
        log::info!("`{modality}` pretrain epoch {}: loss {loss:.5} accuracy {accuracy:.4}", epoch + 1);
        curve.push(EpochStats {
            epoch: epoch + 1,
            loss,
            accuracy,
        });
    }
    Ok((enc, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_shape_matches_shared_latent() {
        let e = ModalityEncoder::new("ECG", 16, 0).unwrap();
        let x = Tensor::filled(&image_shape(), 0.3f32);
        assert_eq!(e.features(&x).unwrap().shape(), [16, 16, 16]);
        assert!(e.params().names().all(|n| n.starts_with("ECG.")));
    }

    #[test]
    fn splice_drops_tail_and_freezes() {
        let e = ModalityEncoder::new("EMG", 4, 1).unwrap();
        let s = e.splice();
        assert!(!s.has_tail() && s.is_frozen());
        assert_eq!(s.params().num_elements(), e.feature_param_count());
        assert_eq!(s.splice(), s);
        assert!(matches!(s.logits(&Tensor::zeros(&image_shape())), Err(BaselineError::NoTail(_))));
    }

    #[test]
    fn subset_takes_first_n_of_shuffle() {
        let s = pretraining_subset(1500, 1000, 3);
        assert_eq!(s.len(), 1000);
        let mut full: Vec<usize> = (0..1500).collect();
        seed_rng(3).shuffle(&mut full);
        assert_eq!(s, full[..1000]);
        assert_eq!(pretraining_subset(10, 1000, 3).len(), 10);
    }

    #[test]
    fn cross_entropy_values() {
        let (l, g) = cross_entropy(&[0.0, 0.0], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, [0.5, -0.5]);
        let (l, _) = cross_entropy(&[-500.0, 500.0], 1);
        assert!(l < 1e-12);
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![(Tensor::zeros(&image_shape()), 1u8); 3];
        assert!(matches!(
            pretrain_encoder("EDA", &data, &PretrainConfig::default()),
            Err(BaselineError::SingleClass { class: 1, .. })
        ));
    }

    #[test]
    fn round_trip_through_weight_store() {
        let e = ModalityEncoder::new("Resp", 8, 2).unwrap().splice();
        let back = ModalityEncoder::from_store("Resp", e.params().clone()).unwrap();
        assert_eq!(back, e);
        assert!(ModalityEncoder::from_store("ECG", e.params().clone()).is_err());
    }
}
