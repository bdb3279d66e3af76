//! The shared encoder: a vector-quantized autoencoder.
//!
//! Encoder: three 4×4 stride-2 convolutions (3→32→64→D) with ReLU between
//! them, then two residual blocks at D channels, mapping 3×128×128 to
//! D×16×16. The decoder mirrors it with transposed convolutions and ends in a
//! sigmoid. The codebook is the `K×D` parameter `codebook`.
//!
//! Training minimizes
//! `mean((x − x̂)²) + mean((sg(z_e) − z_q)²) + β·mean((z_e − sg(z_q))²)`
//! with the straight-through estimator carrying the decoder's input gradient
//! to the encoder. A code left unused for `dead_code_steps` consecutive
//! steps is moved onto a random encoder output from the current batch.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::nn::{
    seed_rng, AdamConfig, Gradients, KernelError, Layer, ParamStore, Real, Sequential, SplitMix64,
    Tensor,
};
use crate::spectral::{ImageSource, SpectralImage, IMAGE_CHANNELS, IMAGE_SIZE};
use crate::weights::{self, WeightsError};

pub const LATENT_SIZE: usize = 16;
pub const CODEBOOK: &str = "codebook";

#[derive(Debug, Error)]
pub enum VqError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("model has no decoder (inference-only)")]
    NoDecoder,
    #[error("model is frozen")]
    Frozen,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("non-finite gradient at step {step}: {source}")]
    NonFiniteGradient { step: usize, source: KernelError },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("weight file does not describe a VQ-VAE: {0}")]
    WrongModel(String),
}

pub type Result<T, E = VqError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqConfig {
    pub codebook_size: usize,
    pub embedding_dim: usize,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub dead_code_steps: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            codebook_size: 32,
            embedding_dim: 16,
            beta: 0.25,
            lr: 1e-3,
            steps: 500,
            batch: 8,
            seed: 0,
            dead_code_steps: 200,
        }
    }
}

/// Loss terms of one sample or the mean over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VqLossReport {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Codebook indices of a `H×W` grid with their embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub height: usize,
    pub width: usize,
    /// Row-major `H×W` indices.
    pub indices: Vec<u32>,
    /// `D×H×W`; column `(i, j)` is exactly codebook row `indices[i·W + j]`.
    pub quantized: Tensor<f32>,
    pub source: ImageSource,
}

impl LatentCode {
    pub fn index(&self, i: usize, j: usize) -> u32 {
        self.indices[i * self.width + j]
    }
}

pub fn encoder_stack(d: usize) -> Sequential {
    Sequential::new(vec![
        Layer::conv2d("enc.conv1", IMAGE_CHANNELS, 32, 4, 2, 1),
        Layer::relu("enc.relu1"),
        Layer::conv2d("enc.conv2", 32, 64, 4, 2, 1),
        Layer::relu("enc.relu2"),
        Layer::conv2d("enc.conv3", 64, d, 4, 2, 1),
        Layer::residual("enc.res1", d, d, 1),
        Layer::residual("enc.res2", d, d, 1),
    ])
}

pub fn decoder_stack(d: usize) -> Sequential {
    Sequential::new(vec![
        Layer::residual("dec.res1", d, d, 1),
        Layer::residual("dec.res2", d, d, 1),
        Layer::relu("dec.relu0"),
        Layer::conv_transpose2d("dec.deconv1", d, 64, 4, 2, 1),
        Layer::relu("dec.relu1"),
        Layer::conv_transpose2d("dec.deconv2", 64, 32, 4, 2, 1),
        Layer::relu("dec.relu2"),
        Layer::conv_transpose2d("dec.deconv3", 32, IMAGE_CHANNELS, 4, 2, 1),
        Layer::sigmoid("dec.out"),
    ])
}

fn image_shape() -> [usize; 3] {
    [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE]
}

fn check_shape(context: &'static str, t: &[usize], expected: &[usize]) -> Result<()> {
    if t != expected {
        return Err(VqError::Shape {
            context,
            expected: expected.to_vec(),
            found: t.to_vec(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqVaeModel {
    encoder: Sequential,
    decoder: Option<Sequential>,
    params: ParamStore<f32>,
    codebook_size: usize,
    embedding_dim: usize,
    frozen: bool,
}

impl VqVaeModel {
    /// Seeded initialization with `K` codes of dimension `D`.
    pub fn new(codebook_size: usize, embedding_dim: usize, seed: u64) -> Result<Self> {
        if codebook_size < 2 {
            return Err(VqError::InvalidCodebook(format!("K must be ≥ 2, got {codebook_size}")));
        }
        if embedding_dim == 0 {
            return Err(VqError::InvalidConfig("D must be ≥ 1".into()));
        }
        let encoder = encoder_stack(embedding_dim);
        let decoder = decoder_stack(embedding_dim);
        let mut rng = seed_rng(seed);
        let mut params = ParamStore::new();
        encoder.init_params(&mut params, &mut rng);
        decoder.init_params(&mut params, &mut rng);
        let bound = 1.0 / codebook_size as f64;
        params.insert(
            CODEBOOK,
            Tensor::from_fn(&[codebook_size, embedding_dim], |_| rng.uniform(-bound, bound) as f32),
        );
        let model = Self {
            encoder,
            decoder: Some(decoder),
            params,
            codebook_size,
            embedding_dim,
            frozen: false,
        };
        model.check_architecture()?;
        Ok(model)
    }

    fn check_architecture(&self) -> Result<()> {
        let latent = [self.embedding_dim, LATENT_SIZE, LATENT_SIZE];
        check_shape("encoder output", &self.encoder.output_shape(&image_shape())?, &latent)?;
        if let Some(dec) = &self.decoder {
            check_shape("decoder output", &dec.output_shape(&latent)?, &image_shape())?;
        }
        Ok(())
    }

    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn decoder(&self) -> Option<&Sequential> {
        self.decoder.as_ref()
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    /// Mutable parameters; refused once frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamStore<f32>> {
        if self.frozen {
            return Err(VqError::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        self.params.get(CODEBOOK).expect("codebook is always present")
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Parameters the encoding path needs: encoder layers plus codebook.
    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count() + self.codebook_size * self.embedding_dim
    }

    /// Frozen copy without decoder weights.
    pub fn into_inference(mut self) -> Self {
        if let Some(dec) = self.decoder.take() {
            for l in dec.layers() {
                for (name, _) in l.param_shapes() {
                    self.params.remove(&name);
                }
            }
        }
        self.frozen = true;
        self
    }

    /// `z_e` for a 3×128×128 image.
    pub fn encode(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        check_shape("encoder input", image.shape(), &image_shape())?;
        Ok(self.encoder.infer(&self.params, image)?)
    }

    pub fn quantize(&self, z_e: &Tensor<f32>) -> Result<LatentCode> {
        quantize(z_e, self.codebook())
    }

    /// Encode and quantize a spectral image, tagging the code with its source.
    pub fn latent(&self, image: &SpectralImage) -> Result<LatentCode> {
        let mut code = self.quantize(&self.encode(image.pixels())?)?;
        code.source = image.source.clone();
        Ok(code)
    }

    pub fn decode(&self, quantized: &Tensor<f32>) -> Result<Tensor<f32>> {
        let dec = self.decoder.as_ref().ok_or(VqError::NoDecoder)?;
        check_shape(
            "decoder input",
            quantized.shape(),
            &[self.embedding_dim, LATENT_SIZE, LATENT_SIZE],
        )?;
        Ok(dec.infer(&self.params, quantized)?)
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        Ok(weights::write_store(&self.params, w)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(weights::save_store(&self.params, path)?)
    }

    /// Loads a frozen model; the decoder is present iff its weights are.
    pub fn read_from(r: impl Read) -> Result<Self> {
        Self::from_store(weights::read_store(r)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_store(weights::load_store(path)?)
    }

    pub fn from_store(params: ParamStore<f32>) -> Result<Self> {
        let cb = params
            .get(CODEBOOK)
            .map_err(|_| VqError::WrongModel("no `codebook` tensor".into()))?;
        let &[k, d] = cb.shape() else {
            return Err(VqError::WrongModel(format!("codebook has shape {:?}", cb.shape())));
        };
        if k < 2 || d == 0 {
            return Err(VqError::InvalidCodebook(format!("shape {k}×{d}")));
        }
        if !cb.is_finite() {
            return Err(VqError::InvalidCodebook("non-finite entries".into()));
        }
        let encoder = encoder_stack(d);
        let decoder = decoder_stack(d);
        let expect = |stack: &Sequential| -> Result<bool> {
            let mut present = 0;
            let mut total = 0;
            for l in stack.layers() {
                for (name, shape) in l.param_shapes() {
                    total += 1;
                    if let Ok(t) = params.get(&name) {
                        if t.shape() != shape.as_slice() {
                            return Err(VqError::WrongModel(format!(
                                "`{name}` has shape {:?}, expected {shape:?}",
                                t.shape()
                            )));
                        }
                        present += 1;
                    }
                }
            }
            Ok(present == total)
        };
        if !expect(&encoder)? {
            return Err(VqError::WrongModel("encoder weights incomplete".into()));
        }
        let has_decoder = expect(&decoder)?;
        let known: BTreeSet<String> = encoder
            .layers()
            .iter()
            .chain(if has_decoder { decoder.layers() } else { &[] })
            .flat_map(|l| l.param_shapes().into_iter().map(|(n, _)| n))
            .chain([CODEBOOK.to_string()])
            .collect();
        if let Some(extra) = params.names().find(|n| !known.contains(*n)) {
            return Err(VqError::WrongModel(format!("unexpected tensor `{extra}`")));
        }
        let model = Self {
            encoder,
            decoder: has_decoder.then_some(decoder),
            params,
            codebook_size: k,
            embedding_dim: d,
            frozen: true,
        };
        model.check_architecture()?;
        Ok(model)
    }
}

/// Nearest codebook row per grid position by squared Euclidean distance in
/// f64; ties go to the lowest index.
pub fn nearest_codes<T: Real>(z_e: &Tensor<T>, codebook: &Tensor<T>) -> Result<Vec<u32>> {
    let &[k, d] = codebook.shape() else {
        return Err(VqError::InvalidCodebook(format!("shape {:?}", codebook.shape())));
    };
    if k < 2 {
        return Err(VqError::InvalidCodebook(format!("K must be ≥ 2, got {k}")));
    }
    if z_e.shape().len() != 3 || z_e.shape()[0] != d {
        return Err(VqError::Shape {
            context: "quantizer input",
            expected: vec![d, 0, 0],
            found: z_e.shape().to_vec(),
        });
    }
    let plane = z_e.shape()[1] * z_e.shape()[2];
    let z = z_e.data();
    let cb = codebook.data();
    let mut v = vec![0.0f64; d];
    Ok((0..plane)
        .map(|p| {
            for (c, slot) in v.iter_mut().enumerate() {
                *slot = z[c * plane + p].as_f64();
            }
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (row, e) in cb.chunks_exact(d).enumerate() {
                let mut dist = 0.0;
                for (a, b) in v.iter().zip(e) {
                    let diff = a - b.as_f64();
                    dist += diff * diff;
                }
                if dist < best_d {
                    best_d = dist;
                    best = row;
                }
            }
            best as u32
        })
        .collect())
}

/// Embedding tensor `D×H×W` for an index grid.
pub fn gather<T: Real>(codebook: &Tensor<T>, indices: &[u32], height: usize, width: usize) -> Tensor<T> {
    let d = codebook.shape()[1];
    let plane = height * width;
    let cb = codebook.data();
    let mut out = vec![T::zero(); d * plane];
    for (p, &k) in indices.iter().enumerate() {
        let row = &cb[k as usize * d..(k as usize + 1) * d];
        for (c, &v) in row.iter().enumerate() {
            out[c * plane + p] = v;
        }
    }
    Tensor::from_vec(vec![d, height, width], out).expect("gather shape")
}

pub fn quantize(z_e: &Tensor<f32>, codebook: &Tensor<f32>) -> Result<LatentCode> {
    let indices = nearest_codes(z_e, codebook)?;
    let (height, width) = (z_e.shape()[1], z_e.shape()[2]);
    Ok(LatentCode {
        quantized: gather(codebook, &indices, height, width),
        height,
        width,
        indices,
        source: ImageSource::default(),
    })
}

fn mean_sq_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    s / a.len().max(1) as f64
}

/// The three loss terms; both latent terms are means over every element of
/// `z_e`.
pub fn vq_loss<T: Real>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    z_e: &Tensor<T>,
    z_q: &Tensor<T>,
    beta: f64,
) -> Result<VqLossReport> {
    check_shape("reconstruction", x_hat.shape(), x.shape())?;
    check_shape("quantized latent", z_q.shape(), z_e.shape())?;
    let reconstruction = mean_sq_diff(x, x_hat);
    let latent = mean_sq_diff(z_e, z_q);
    let commitment = beta * latent;
    Ok(VqLossReport {
        reconstruction,
        codebook: latent,
        commitment,
        total: reconstruction + latent + commitment,
    })
}

/// Everything one training sample contributes.
#[derive(Clone, Debug)]
pub struct SampleGrad<T: Real> {
    pub report: VqLossReport,
    pub grads: Gradients<T>,
    /// Straight-through gradient of the total loss with respect to `z_e`.
    pub grad_z_e: Tensor<T>,
    pub z_e: Tensor<T>,
    pub indices: Vec<u32>,
}

/// Forward and backward pass of the VQ objective for one image.
pub fn sample_gradients<T: Real>(
    encoder: &Sequential,
    decoder: &Sequential,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    beta: f64,
) -> Result<SampleGrad<T>> {
    let (z_e, enc_caches) = encoder.forward(params, x)?;
    let codebook = params.get(CODEBOOK)?;
    let (k, d) = (codebook.shape()[0], codebook.shape()[1]);
    let indices = nearest_codes(&z_e, codebook)?;
    let (h, w) = (z_e.shape()[1], z_e.shape()[2]);
    let z_q = gather(codebook, &indices, h, w);
    let (x_hat, dec_caches) = decoder.forward(params, &z_q)?;
    let report = vq_loss(x, &x_hat, &z_e, &z_q, beta)?;

    let nx = x.len() as f64;
    let nz = z_e.len() as f64;
    let g_xhat = Tensor::from_fn(x.shape(), |i| {
        T::of(2.0 * (x_hat.data()[i].as_f64() - x.data()[i].as_f64()) / nx)
    });
    let mut grads = Gradients::new();
    let g_zq = decoder.backward(params, &dec_caches, &g_xhat, &mut grads)?;

    let plane = h * w;
    let mut g_ze = g_zq;
    {
        let cb_grad = grads.slot(CODEBOOK, &[k, d]).data_mut();
        for (i, g) in g_ze.data_mut().iter_mut().enumerate() {
            let diff = z_e.data()[i].as_f64() - z_q.data()[i].as_f64();
            *g = T::of(g.as_f64() + beta * 2.0 * diff / nz);
            let (c, p) = (i / plane, i % plane);
            let slot = &mut cb_grad[indices[p] as usize * d + c];
            *slot = T::of(slot.as_f64() - 2.0 * diff / nz);
        }
    }
    encoder.backward(params, &enc_caches, &g_ze, &mut grads)?;
    Ok(SampleGrad {
        report,
        grads,
        grad_z_e: g_ze,
        z_e,
        indices,
    })
}

fn validate(images: &[Tensor<f32>], cfg: &VqConfig) -> Result<()> {
    if images.is_empty() {
        return Err(VqError::EmptyDataset);
    }
    for img in images {
        check_shape("training image", img.shape(), &image_shape())?;
    }
    if cfg.batch == 0 {
        return Err(VqError::InvalidConfig("batch must be ≥ 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(VqError::InvalidConfig(format!("lr must be positive, got {}", cfg.lr)));
    }
    if !(cfg.beta >= 0.0 && cfg.beta.is_finite()) {
        return Err(VqError::InvalidConfig(format!("beta must be ≥ 0, got {}", cfg.beta)));
    }
    if cfg.dead_code_steps == 0 {
        return Err(VqError::InvalidConfig("dead_code_steps must be ≥ 1".into()));
    }
    Ok(())
}

/// Cycles through shuffled epochs of sample indices.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: SplitMix64,
}

impl Batcher {
    fn new(n: usize, rng: SplitMix64) -> Self {
        Self {
            order: (0..n).collect(),
            cursor: n,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Trains a fresh model; returns it with one loss report per step (batch
/// means).
pub fn train_vqvae(images: &[Tensor<f32>], cfg: &VqConfig) -> Result<(VqVaeModel, Vec<VqLossReport>)> {
    validate(images, cfg)?;
    let mut model = VqVaeModel::new(cfg.codebook_size, cfg.embedding_dim, cfg.seed)?;
    let decoder = model.decoder.clone().expect("fresh model has a decoder");
    let mut rng = seed_rng(cfg.seed).fork();
    let mut batcher = Batcher::new(images.len(), rng.fork());
    let adam = AdamConfig::with_lr(cfg.lr);
    let (k, d) = (cfg.codebook_size, cfg.embedding_dim);
    let mut last_used = vec![0usize; k];
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = batcher.next(cfg.batch);
        let samples: Vec<SampleGrad<f32>> = batch
            .par_iter()
            .map(|&i| sample_gradients(&model.encoder, &decoder, &model.params, &images[i], cfg.beta))
            .collect::<Result<_>>()?;

        let inv = 1.0 / samples.len() as f64;
        let mut grads = Gradients::new();
        let mut report = VqLossReport::default();
        for s in &samples {
            grads.merge(&s.grads)?;
            report.reconstruction += s.report.reconstruction * inv;
            report.codebook += s.report.codebook * inv;
            report.commitment += s.report.commitment * inv;
            report.total += s.report.total * inv;
        }
        if !report.total.is_finite() {
            return Err(VqError::NonFiniteLoss { step });
        }
        grads.scale(inv as f32);
        model.params.accumulate(&grads)?;
        model
            .params
            .adam_step(&adam, step as u64 + 1)
            .map_err(|source| VqError::NonFiniteGradient { step, source })?;

        let now = step + 1;
        for s in &samples {
            for &i in &s.indices {
                last_used[i as usize] = now;
            }
        }
        for code in 0..k {
            if now - last_used[code] >= cfg.dead_code_steps {
                let s = &samples[rng.below(samples.len())];
                let plane = s.z_e.len() / d;
                let p = rng.below(plane);
                let cb = model.params.get_mut(CODEBOOK)?;
                for c in 0..d {
                    cb.data_mut()[code * d + c] = s.z_e.data()[c * plane + p];
                }
                model.params.reset_moments_range(CODEBOOK, code * d..(code + 1) * d)?;
                last_used[code] = now;
                log::debug!("step {now}: re-seeded dead code {code}");
            }
        }
        curve.push(report);
        if now % 50 == 0 || now == cfg.steps {
            log::info!(
                "vq step {now}/{}: recon {:.5} total {:.5}",
                cfg.steps,
                report.reconstruction,
                report.total
            );
        }
    }
    Ok((model, curve))
}

/// Mean reconstruction MSE of encode → quantize → decode over `images`.
pub fn reconstruction_mse(model: &VqVaeModel, images: &[Tensor<f32>]) -> Result<f64> {
    let errs: Vec<f64> = images
        .par_iter()
        .map(|img| {
            let code = model.quantize(&model.encode(img)?)?;
            let x_hat = model.decode(&code.quantized)?;
            Ok(mean_sq_diff(img, &x_hat))
        })
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

/// Distinct codes used across the encodings of `images`.
pub fn codebook_usage(model: &VqVaeModel, images: &[Tensor<f32>]) -> Result<usize> {
    let sets: Vec<Vec<u32>> = images
        .par_iter()
        .map(|img| Ok(model.quantize(&model.encode(img)?)?.indices))
        .collect::<Result<_>>()?;
    Ok(sets.into_iter().flatten().collect::<BTreeSet<_>>().len())
}

/// Loss curve as CSV with header `step,reconstruction,codebook,commitment,total`.
pub fn write_loss_curve(curve: &[VqLossReport], w: impl Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "reconstruction", "codebook", "commitment", "total"])?;
    for (i, r) in curve.iter().enumerate() {
        out.write_record([
            i.to_string(),
            r.reconstruction.to_string(),
            r.codebook.to_string(),
            r.commitment.to_string(),
            r.total.to_string(),
        ])?;
    }
    out.flush()
}
