//! Analytic MAC, parameter, memory-traffic and energy accounting.
//!
//! MACs count multiplications:
//!
//! | layer             | MACs per sample                 |
//! |-------------------|---------------------------------|
//! | conv2d            | `Co·Ho·Wo·Ci·k²`                |
//! | conv_transpose2d  | `Ci·Hi·Wi·Co·k²`                |
//! | dense             | `in·out`                        |
//! | recurrent cell    | `3·(x + h)·h` per step          |
//! | relu, sigmoid     | 0                               |
//! | residual block    | sum of its two convolutions     |
//!
//! Memory traffic for a batch of `B` samples with `b`-byte elements:
//! `fetch = (input_elems·B + param_elems)·b` (weights are read once per
//! batch) and `write = output_elems·B·b`. A residual block is its inner
//! sequence `relu, conv, relu, conv` followed by the skip addition, which
//! fetches two output-sized tensors and writes one.
//!
//! Worked example: dense 64→1 at batch 1 fetches `(64 + 65)·4 = 516` bytes
//! and writes 4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::HeadArch;
use crate::nn::{KernelError, Layer, LayerKind, Sequential};
use crate::spectral::StftConfig;

/// Modeled energy per multiply-accumulate, in joules.
pub const DEFAULT_ENERGY_PER_MAC_J: f64 = 4.6e-12;

#[derive(Debug, Error)]
pub enum CostError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("{encoders} encoders supplied for {modalities} modalities")]
    EncoderCountMismatch { encoders: usize, modalities: usize },
    #[error("invalid pipeline shape: {0}")]
    InvalidShape(String),
}

pub type Result<T, E = CostError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConfig {
    pub energy_per_mac_j: f64,
    pub elem_bytes: u64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            energy_per_mac_j: DEFAULT_ENERGY_PER_MAC_J,
            elem_bytes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub layer: String,
    pub kind: String,
    pub macs: u64,
    pub params: u64,
    pub fetch_bytes: u64,
    pub write_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub macs: u64,
    pub params: u64,
    pub fetch_bytes: u64,
    pub write_bytes: u64,
    pub energy_j: f64,
    pub breakdown: Vec<CostRow>,
}

impl CostReport {
    /// Totals recomputed from `rows`.
    pub fn from_rows(rows: Vec<CostRow>, energy_per_mac_j: f64) -> Self {
        let macs = rows.iter().map(|r| r.macs).sum::<u64>();
        Self {
            macs,
            params: rows.iter().map(|r| r.params).sum(),
            fetch_bytes: rows.iter().map(|r| r.fetch_bytes).sum(),
            write_bytes: rows.iter().map(|r| r.write_bytes).sum(),
            energy_j: macs as f64 * energy_per_mac_j,
            breakdown: rows,
        }
    }

    pub fn empty() -> Self {
        Self::from_rows(Vec::new(), 0.0)
    }

    /// Concatenation of several reports.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a CostReport>, energy_per_mac_j: f64) -> Self {
        Self::from_rows(
            reports.into_iter().flat_map(|r| r.breakdown.iter().cloned()).collect(),
            energy_per_mac_j,
        )
    }

    /// Breakdown as CSV `layer,kind,macs,params,fetch_bytes,write_bytes`.
    pub fn write_breakdown(&self, w: impl std::io::Write) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.breakdown {
            out.serialize(row)?;
        }
        out.flush()
    }
}

fn elems(shape: &[usize]) -> u64 {
    shape.iter().product::<usize>() as u64
}

/// Multiplications for one sample through `layer`.
pub fn layer_macs(layer: &Layer, input: &[usize]) -> Result<u64> {
    let out = layer.output_shape(input)?;
    Ok(match layer.kind() {
        LayerKind::Conv2d(s) => elems(&out) * (s.in_channels * s.kernel * s.kernel) as u64,
        LayerKind::ConvTranspose2d(s) => elems(input) * (s.out_channels * s.kernel * s.kernel) as u64,
        LayerKind::Dense { inputs, outputs } => (inputs * outputs) as u64,
        LayerKind::RecurrentCell { input, hidden } => (3 * (input + hidden) * hidden) as u64,
        LayerKind::Relu | LayerKind::Sigmoid => 0,
        LayerKind::ResidualBlock { .. } => {
            let (a, b) = layer.residual_parts().expect("residual");
            let mid = a.output_shape(input)?;
            layer_macs(&a, input)? + layer_macs(&b, &mid)?
        }
    })
}

/// `(fetch_bytes, write_bytes)` for a batch through `layer`.
pub fn memory_traffic(layer: &Layer, input: &[usize], batch: u64, elem_bytes: u64) -> Result<(u64, u64)> {
    let out = layer.output_shape(input)?;
    if let LayerKind::ResidualBlock { .. } = layer.kind() {
        let (a, b) = layer.residual_parts().expect("residual");
        let relu = Layer::relu("relu");
        let mid = a.output_shape(input)?;
        let parts = [
            memory_traffic(&relu, input, batch, elem_bytes)?,
            memory_traffic(&a, input, batch, elem_bytes)?,
            memory_traffic(&relu, &mid, batch, elem_bytes)?,
            memory_traffic(&b, &mid, batch, elem_bytes)?,
            (2 * elems(&out) * batch * elem_bytes, elems(&out) * batch * elem_bytes),
        ];
        return Ok(parts.iter().fold((0, 0), |(f, w), p| (f + p.0, w + p.1)));
    }
    let params = layer.param_count() as u64;
    Ok((
        (elems(input) * batch + params) * elem_bytes,
        elems(&out) * batch * elem_bytes,
    ))
}

fn layer_row(layer: &Layer, input: &[usize], batch: u64, cfg: &CostConfig) -> Result<CostRow> {
    let (fetch_bytes, write_bytes) = memory_traffic(layer, input, batch, cfg.elem_bytes)?;
    Ok(CostRow {
        layer: layer.name().to_string(),
        kind: layer.kind_name().to_string(),
        macs: layer_macs(layer, input)? * batch,
        params: layer.param_count() as u64,
        fetch_bytes,
        write_bytes,
    })
}

/// One row per layer for `batch` samples.
pub fn stack_rows(stack: &Sequential, input: &[usize], batch: u64, cfg: &CostConfig) -> Result<Vec<CostRow>> {
    let inputs = stack.layer_inputs(input)?;
    stack
        .layers()
        .iter()
        .zip(&inputs)
        .map(|(l, shape)| layer_row(l, shape, batch, cfg))
        .collect()
}

pub fn stack_cost(stack: &Sequential, input: &[usize], batch: u64, cfg: &CostConfig) -> Result<CostReport> {
    Ok(CostReport::from_rows(stack_rows(stack, input, batch, cfg)?, cfg.energy_per_mac_j))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    Unified,
    Baseline,
}

/// How the encoding stage is realized.
#[derive(Clone, Copy, Debug)]
pub enum EncodingStage<'a> {
    /// One encoder for every modality, followed by nearest-code search over
    /// a `K×D` codebook.
    Shared {
        encoder: &'a Sequential,
        codebook: (usize, usize),
    },
    /// One encoder per modality, in modality order.
    PerModality { encoders: &'a [&'a Sequential] },
}

/// Sizes the cost of a pipeline depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineShape {
    pub modalities: Vec<String>,
    /// Signal channels per modality (3 for the accelerometer).
    pub channels_per_modality: Vec<usize>,
    pub seq_len: usize,
    pub window_len: usize,
    pub stft: StftConfig,
    pub image_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineCost {
    pub system: SystemKind,
    pub modality_count: usize,
    pub encoder_loads: usize,
    pub preprocess: CostReport,
    pub encode: CostReport,
    pub fuse: CostReport,
    pub classify: CostReport,
}

impl PipelineCost {
    pub fn total(&self, cfg: &CostConfig) -> CostReport {
        CostReport::combine([&self.preprocess, &self.encode, &self.fuse, &self.classify], cfg.energy_per_mac_j)
    }

    /// Encode, fuse and classify; the spectral front end is shared by both
    /// systems and reported separately.
    pub fn inference(&self, cfg: &CostConfig) -> CostReport {
        CostReport::combine([&self.encode, &self.fuse, &self.classify], cfg.energy_per_mac_j)
    }
}

fn preprocess_rows(shape: &PipelineShape, cfg: &CostConfig) -> Result<Vec<CostRow>> {
    let n = shape.stft.frame_len;
    if n == 0 || shape.stft.hop == 0 || n > shape.window_len {
        return Err(CostError::InvalidShape("STFT frame does not fit the window".into()));
    }
    let frames = ((shape.window_len - n) / shape.stft.hop + 1) as u64;
    let bins = (n / 2 + 1) as u64;
    let l = shape.seq_len as u64;
    Ok(shape
        .modalities
        .iter()
        .zip(&shape.channels_per_modality)
        .map(|(name, &c)| {
            let c = c as u64;
            CostRow {
                layer: format!("stft.{name}"),
                kind: "stft".into(),
                // Taper multiply plus one complex twiddle product per bin and sample.
                macs: c * l * frames * n as u64 * (1 + 2 * bins),
                params: 0,
                fetch_bytes: c * l * shape.window_len as u64 * cfg.elem_bytes,
                write_bytes: l * elems(&shape.image_shape) * cfg.elem_bytes,
            }
        })
        .collect())
}

/// Per-stage cost of classifying one sequence of `L` windows over the
/// modalities in `shape`.
pub fn pipeline_cost(
    stage: EncodingStage<'_>,
    shape: &PipelineShape,
    head: &HeadArch,
    cfg: &CostConfig,
) -> Result<PipelineCost> {
    let m = shape.modalities.len();
    if m == 0 || shape.seq_len == 0 {
        return Err(CostError::InvalidShape("need at least one modality and one step".into()));
    }
    if shape.channels_per_modality.len() != m {
        return Err(CostError::InvalidShape("one channel count per modality".into()));
    }
    let l = shape.seq_len as u64;
    let img = shape.image_shape;
    let e = cfg.energy_per_mac_j;

    let (system, encoder_loads, encode_rows, latent_shape) = match stage {
        EncodingStage::Shared { encoder, codebook: (k, d) } => {
            let batch = m as u64 * l;
            let mut rows = stack_rows(encoder, &img, batch, cfg)?;
            let latent = encoder.output_shape(&img)?;
            let positions: u64 = latent[1..].iter().product::<usize>() as u64;
            rows.push(CostRow {
                layer: "quantize".into(),
                kind: "nearest_code".into(),
                macs: batch * positions * (k * d) as u64,
                params: (k * d) as u64,
                fetch_bytes: (batch * elems(&latent) + (k * d) as u64) * cfg.elem_bytes,
                write_bytes: batch * elems(&latent) * cfg.elem_bytes,
            });
            (SystemKind::Unified, 1, rows, latent)
        }
        EncodingStage::PerModality { encoders } => {
            if encoders.len() != m {
                return Err(CostError::EncoderCountMismatch {
                    encoders: encoders.len(),
                    modalities: m,
                });
            }
            let mut rows = Vec::new();
            let mut latent = Vec::new();
            for enc in encoders {
                rows.extend(stack_rows(enc, &img, l, cfg)?);
                latent = enc.output_shape(&img)?;
            }
            (SystemKind::Baseline, m, rows, latent)
        }
    };

    let fused_bytes = m as u64 * l * elems(&latent_shape) * cfg.elem_bytes;
    let fuse_rows = vec![CostRow {
        layer: "fuse".into(),
        kind: "concat".into(),
        macs: 0,
        params: 0,
        fetch_bytes: fused_bytes,
        write_bytes: fused_bytes,
    }];

    let step_shape = head.step_shape();
    let mut classify_rows = stack_rows(&head.features, &step_shape, l, cfg)?;
    let feat = head.features.output_shape(&step_shape)?;
    let cell_in = [elems(&feat) as usize + head.config.hidden];
    classify_rows.push(layer_row(&head.cell, &cell_in, l, cfg)?);
    classify_rows.push(layer_row(&head.output, &[head.config.hidden], 1, cfg)?);

    Ok(PipelineCost {
        system,
        modality_count: m,
        encoder_loads,
        preprocess: CostReport::from_rows(preprocess_rows(shape, cfg)?, e),
        encode: CostReport::from_rows(encode_rows, e),
        fuse: CostReport::from_rows(fuse_rows, e),
        classify: CostReport::from_rows(classify_rows, e),
    })
}

/// One row of the unified-vs-baseline comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub unified_macs: u64,
    pub baseline_macs: u64,
    pub unified_params: u64,
    pub baseline_params: u64,
    pub unified_loads: usize,
    pub baseline_loads: usize,
    pub runtime_s_unified: f64,
    pub runtime_s_baseline: f64,
}

impl ScalingRow {
    /// Analytic columns from the two pipeline costs; MACs cover encode, fuse
    /// and classify, parameters cover the encoding stage.
    pub fn from_costs(unified: &PipelineCost, baseline: &PipelineCost, cfg: &CostConfig) -> Self {
        Self {
            m: unified.modality_count,
            unified_macs: unified.inference(cfg).macs,
            baseline_macs: baseline.inference(cfg).macs,
            unified_params: unified.encode.params,
            baseline_params: baseline.encode.params,
            unified_loads: unified.encoder_loads,
            baseline_loads: baseline.encoder_loads,
            runtime_s_unified: f64::NAN,
            runtime_s_baseline: f64::NAN,
        }
    }
}

pub fn write_scaling_table(rows: &[ScalingRow], w: impl std::io::Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()
}
