//! Latent fusion, the conv-recurrent stress classifier and its metrics.
//!
//! Per sequence step the fused tensor passes through two 3×3 stride-2
//! convolutions with ReLU, is flattened, and feeds a gated recurrent cell.
//! The final hidden state goes through a dense layer to one logit.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    seed_rng, sigmoid, AdamConfig, Cache, Gradients, KernelError, Layer, ParamStore, Real,
    Sequential, Tensor,
};
use crate::vqvae::{LatentCode, LATENT_SIZE};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("modality `{0}` missing from latents")]
    MissingModality(String),
    #[error("modality order is empty")]
    EmptyOrder,
    #[error("modality `{modality}` has shape {found:?}, expected {expected:?}")]
    DimMismatch {
        modality: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("sequence does not fit the head: {0}")]
    HeadMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset contains only class {0}")]
    SingleClass(u8),
    #[error("label {0} is not binary")]
    BadLabel(u8),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// Channel-wise concatenation of per-modality latents.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedLatent {
    /// `(M·D)×H×W`, block `m` holding modality `modality_order[m]`.
    pub tensor: Tensor<f32>,
    pub modality_order: Vec<String>,
}

/// Concatenates `D×H×W` tensors along channels in `order`.
pub fn fuse_tensors(tensors: &BTreeMap<String, &Tensor<f32>>, order: &[String]) -> Result<FusedLatent> {
    let first = order.first().ok_or(FusionError::EmptyOrder)?;
    let shape = tensors
        .get(first)
        .ok_or_else(|| FusionError::MissingModality(first.clone()))?
        .shape()
        .to_vec();
    let mut data = Vec::with_capacity(order.len() * shape.iter().product::<usize>());
    for name in order {
        let t = tensors
            .get(name)
            .ok_or_else(|| FusionError::MissingModality(name.clone()))?;
        if t.shape() != shape.as_slice() {
            return Err(FusionError::DimMismatch {
                modality: name.clone(),
                expected: shape.clone(),
                found: t.shape().to_vec(),
            });
        }
        data.extend_from_slice(t.data());
    }
    let mut fused_shape = shape;
    fused_shape[0] *= order.len();
    Ok(FusedLatent {
        tensor: Tensor::from_vec(fused_shape, data)?,
        modality_order: order.to_vec(),
    })
}

/// Fuses the quantized tensors of `latents`.
pub fn fuse(latents: &BTreeMap<String, LatentCode>, order: &[String]) -> Result<FusedLatent> {
    let tensors = latents
        .iter()
        .map(|(k, v)| (k.clone(), &v.quantized))
        .collect();
    fuse_tensors(&tensors, order)
}

/// Splits a fused tensor back into its per-modality blocks.
pub fn unfuse(fused: &FusedLatent) -> Vec<(String, Tensor<f32>)> {
    let m = fused.modality_order.len();
    let shape = fused.tensor.shape();
    let block = fused.tensor.len() / m;
    let mut block_shape = shape.to_vec();
    block_shape[0] /= m;
    fused
        .modality_order
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let data = fused.tensor.data()[i * block..(i + 1) * block].to_vec();
            (name.clone(), Tensor::from_vec(block_shape.clone(), data).expect("block shape"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub steps: Vec<FusedLatent>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    /// `M·D`.
    pub in_channels: usize,
    /// Sequence length L.
    pub seq_len: usize,
    pub spatial: usize,
    pub conv_channels: usize,
    pub hidden: usize,
}

impl HeadConfig {
    pub fn new(in_channels: usize, seq_len: usize) -> Self {
        Self {
            in_channels,
            seq_len,
            spatial: LATENT_SIZE,
            conv_channels: 16,
            hidden: 64,
        }
    }
}

/// Layer structure of the head, shared by every scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadArch {
    pub config: HeadConfig,
    pub features: Sequential,
    pub cell: Layer,
    pub output: Layer,
    feature_shape: Vec<usize>,
}

/// Activation records of one sequence.
pub struct HeadCache<T: Real> {
    features: Vec<Vec<Cache<T>>>,
    cells: Vec<Cache<T>>,
    output: Cache<T>,
}

impl HeadArch {
    pub fn new(config: HeadConfig) -> Result<Self> {
        let c = config.conv_channels;
        let features = Sequential::new(vec![
            Layer::conv2d("head.conv1", config.in_channels, c, 3, 2, 1),
            Layer::relu("head.relu1"),
            Layer::conv2d("head.conv2", c, c, 3, 2, 1),
            Layer::relu("head.relu2"),
        ]);
        let feature_shape = features.output_shape(&[config.in_channels, config.spatial, config.spatial])?;
        let flat: usize = feature_shape.iter().product();
        Ok(Self {
            config,
            features,
            cell: Layer::recurrent("head.gru", flat, config.hidden),
            output: Layer::dense("head.out", config.hidden, 1),
            feature_shape,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.features
            .layers()
            .iter()
            .chain([&self.cell, &self.output])
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    pub fn step_shape(&self) -> [usize; 3] {
        [self.config.in_channels, self.config.spatial, self.config.spatial]
    }

    fn check_steps<T: Real>(&self, steps: &[&Tensor<T>]) -> Result<()> {
        if steps.is_empty() {
            return Err(FusionError::HeadMismatch("sequence has no steps".into()));
        }
        if steps.len() != self.config.seq_len {
            return Err(FusionError::HeadMismatch(format!(
                "sequence length {} but head expects {}",
                steps.len(),
                self.config.seq_len
            )));
        }
        if let Some(bad) = steps.iter().find(|s| s.shape() != self.step_shape()) {
            return Err(FusionError::HeadMismatch(format!(
                "step shape {:?} but head expects {:?}",
                bad.shape(),
                self.step_shape()
            )));
        }
        Ok(())
    }

    /// Logit for one sequence.
    pub fn forward<T: Real>(&self, params: &ParamStore<T>, steps: &[&Tensor<T>]) -> Result<(T, HeadCache<T>)> {
        self.check_steps(steps)?;
        let hidden = self.config.hidden;
        let mut h = vec![T::zero(); hidden];
        let mut features = Vec::with_capacity(steps.len());
        let mut cells = Vec::with_capacity(steps.len());
        for x in steps {
            let (f, fc) = self.features.forward(params, x)?;
            let mut input = f.into_data();
            input.extend_from_slice(&h);
            let len = input.len();
            let (h_next, cc) = self.cell.forward(params, &Tensor::from_vec(vec![len], input)?)?;
            h = h_next.into_data();
            features.push(fc);
            cells.push(cc);
        }
        let (logit, output) = self.output.forward(params, &Tensor::from_vec(vec![hidden], h)?)?;
        Ok((
            logit.data()[0],
            HeadCache {
                features,
                cells,
                output,
            },
        ))
    }

    /// Backpropagates `d loss / d logit`.
    pub fn backward<T: Real>(
        &self,
        params: &ParamStore<T>,
        cache: &HeadCache<T>,
        grad_logit: T,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let flat: usize = self.feature_shape.iter().product();
        let g = Tensor::from_vec(vec![1], vec![grad_logit])?;
        let mut g_h = self.output.backward(params, &cache.output, &g, grads)?.into_data();
        for (fc, cc) in cache.features.iter().zip(&cache.cells).rev() {
            let g_in = self
                .cell
                .backward(params, cc, &Tensor::from_vec(vec![g_h.len()], g_h)?, grads)?
                .into_data();
            let g_feat = Tensor::from_vec(self.feature_shape.clone(), g_in[..flat].to_vec())?;
            g_h = g_in[flat..].to_vec();
            self.features.backward(params, fc, &g_feat, grads)?;
        }
        Ok(())
    }
}

/// `softplus(z) − y·z`, stable for large `|z|`.
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    let y = label as f64;
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    arch: HeadArch,
    params: ParamStore<f32>,
}

impl ClassifierHead {
    pub fn new(config: HeadConfig, seed: u64) -> Result<Self> {
        let arch = HeadArch::new(config)?;
        let mut params = ParamStore::new();
        let mut rng = seed_rng(seed);
        for l in arch.layers() {
            l.init_params(&mut params, &mut rng);
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(config: HeadConfig, params: ParamStore<f32>) -> Result<Self> {
        let arch = HeadArch::new(config)?;
        for l in arch.layers() {
            for (name, shape) in l.param_shapes() {
                let t = params.get(&name)?;
                if t.shape() != shape.as_slice() {
                    return Err(FusionError::HeadMismatch(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &HeadArch {
        &self.arch
    }

    pub fn config(&self) -> HeadConfig {
        self.arch.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn logit(&self, sample: &SequenceSample) -> Result<f64> {
        let steps: Vec<&Tensor<f32>> = sample.steps.iter().map(|s| &s.tensor).collect();
        Ok(self.arch.forward(&self.params, &steps)?.0 as f64)
    }

    /// Probability of the high-stress class.
    pub fn classify(&self, sample: &SequenceSample) -> Result<f64> {
        Ok(sigmoid(self.logit(sample)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn check_labels(samples: &[SequenceSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    if let Some(s) = samples.iter().find(|s| s.label > 1) {
        return Err(FusionError::BadLabel(s.label));
    }
    let first = samples[0].label;
    if samples.iter().all(|s| s.label == first) {
        return Err(FusionError::SingleClass(first));
    }
    Ok(())
}

/// Adam on binary cross-entropy. Each epoch visits the samples in a seeded
/// shuffle; the reported loss and accuracy are over that epoch's forward
/// passes.
pub fn train_classifier(
    samples: &[SequenceSample],
    head_config: HeadConfig,
    cfg: &TrainConfig,
) -> Result<(ClassifierHead, Vec<EpochStats>)> {
    check_labels(samples)?;
    if cfg.batch == 0 {
        return Err(FusionError::InvalidConfig("batch must be ≥ 1".into()));
    }
    let mut head = ClassifierHead::new(head_config, cfg.seed)?;
    let mut rng = seed_rng(cfg.seed).fork();
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let arch = &head.arch;
            let params = &head.params;
            let results: Vec<(Gradients<f32>, f64, bool)> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let steps: Vec<&Tensor<f32>> = s.steps.iter().map(|x| &x.tensor).collect();
                    let (logit, cache) = arch.forward(params, &steps)?;
                    let z = logit as f64;
                    let y = s.label as f64;
                    let mut grads = Gradients::new();
                    arch.backward(params, &cache, (sigmoid(z) - y) as f32, &mut grads)?;
                    Ok((grads, bce_with_logit(z, s.label), (z > 0.0) == (s.label == 1)))
                })
                .collect::<Result<_>>()?;
            let mut grads = Gradients::new();
            for (g, l, ok) in &results {
                grads.merge(g)?;
                loss_sum += l;
                correct += usize::from(*ok);
            }
            grads.scale(1.0 / chunk.len() as f32);
            head.params.accumulate(&grads)?;
            t += 1;
            head.params.adam_step(&adam, t).map_err(|e| match e {
                KernelError::NonFiniteGradient { .. } => FusionError::NonFiniteLoss { epoch },
                other => other.into(),
            })?;
        }
        let loss = loss_sum / samples.len() as f64;
        if !loss.is_finite() {
            return Err(FusionError::NonFiniteLoss { epoch });
        }
        let accuracy = correct as f64 / samples.len() as f64;
        log::info!("classifier epoch {}: loss {loss:.5} accuracy {accuracy:.4}", epoch + 1);
        curve.push(EpochStats {
            epoch: epoch + 1,
            loss,
            accuracy,
        });
    }
    Ok((head, curve))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the dataset lacks a class.
    pub auc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Metrics {
    pub fn from_confusion(tp: u64, fp: u64, tn: u64, fn_: u64, auc: Option<f64>) -> Self {
        let total = tp + fp + tn + fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy: ratio(tp + tn, total),
            f1,
            auc,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// Confusion at `threshold` (score ≥ threshold is positive) plus AUC.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(FusionError::EmptyDataset);
        }
        assert_eq!(scores.len(), labels.len(), "one label per score");
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, 1) => tp += 1,
                (true, 0) => fp += 1,
                (false, 0) => tn += 1,
                (false, 1) => fn_ += 1,
                (_, other) => return Err(FusionError::BadLabel(other)),
            }
        }
        Ok(Self::from_confusion(tp, fp, tn, fn_, rank_auc(scores, labels)))
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(Σ ranks of positives − n⁺(n⁺+1)/2) / (n⁺·n⁻)` with mean ranks for ties;
/// `None` unless both classes are present.
pub fn rank_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        rank_sum += mean_rank * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Probabilities for every sample, in order.
pub fn predict(head: &ClassifierHead, dataset: &[SequenceSample]) -> Result<Vec<f64>> {
    dataset.par_iter().map(|s| head.classify(s)).collect()
}

pub fn evaluate(head: &ClassifierHead, dataset: &[SequenceSample], threshold: f64) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(FusionError::EmptyDataset);
    }
    let scores = predict(head, dataset)?;
    let labels: Vec<u8> = dataset.iter().map(|s| s.label).collect();
    Metrics::from_scores(&scores, &labels, threshold)
}

/// Per-epoch curve as CSV `epoch,loss,accuracy`.
pub fn write_curve(curve: &[EpochStats], w: impl std::io::Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in curve {
        out.serialize(row)?;
    }
    out.flush()
}
