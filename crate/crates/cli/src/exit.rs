//! Mapping from errors to process exit codes.

use std::error::Error;

use lsf_core::baseline::BaselineError;
use lsf_core::costmodel::CostError;
use lsf_core::fusion::FusionError;
use lsf_core::nn::KernelError;
use lsf_core::pipeline::PipelineError;
use lsf_core::vqvae::VqError;

use crate::config::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Bad command-line arguments that clap cannot see, such as a missing
/// combination of flags.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn kernel(e: &KernelError) -> Option<ExitKind> {
    matches!(e, KernelError::NonFiniteGradient { .. }).then_some(ExitKind::Numeric)
}

fn vq(e: &VqError) -> Option<ExitKind> {
    match e {
        VqError::NonFiniteLoss { .. } | VqError::NonFiniteGradient { .. } => Some(ExitKind::Numeric),
        VqError::InvalidConfig(_) => Some(ExitKind::Usage),
        VqError::Kernel(k) => kernel(k),
        _ => None,
    }
}

fn fusion(e: &FusionError) -> Option<ExitKind> {
    match e {
        FusionError::NonFiniteLoss { .. } => Some(ExitKind::Numeric),
        FusionError::InvalidConfig(_) => Some(ExitKind::Usage),
        FusionError::Kernel(k) => kernel(k),
        _ => None,
    }
}

fn baseline(e: &BaselineError) -> Option<ExitKind> {
    match e {
        BaselineError::NonFiniteLoss { .. } => Some(ExitKind::Numeric),
        BaselineError::InvalidConfig(_) => Some(ExitKind::Usage),
        BaselineError::Kernel(k) => kernel(k),
        _ => None,
    }
}

fn pipeline(e: &PipelineError) -> Option<ExitKind> {
    match e {
        PipelineError::Vq(v) => vq(v),
        PipelineError::Fusion(f) => fusion(f),
        PipelineError::Baseline(b) => baseline(b),
        PipelineError::Cost(CostError::Kernel(k)) => kernel(k),
        PipelineError::UnknownPermutation(_) => Some(ExitKind::Usage),
        _ => None,
    }
}

fn one(e: &(dyn Error + 'static)) -> Option<ExitKind> {
    if e.is::<ConfigError>() || e.is::<UsageError>() {
        return Some(ExitKind::Usage);
    }
    if let Some(p) = e.downcast_ref::<PipelineError>() {
        return pipeline(p);
    }
    if let Some(v) = e.downcast_ref::<VqError>() {
        return vq(v);
    }
    if let Some(f) = e.downcast_ref::<FusionError>() {
        return fusion(f);
    }
    if let Some(b) = e.downcast_ref::<BaselineError>() {
        return baseline(b);
    }
    e.downcast_ref::<KernelError>().and_then(kernel)
}

/// Usage and numeric failures are recognized anywhere in the error chain;
/// everything else is a data error.
pub fn classify(err: &anyhow::Error) -> ExitKind {
    err.chain().find_map(one).unwrap_or(ExitKind::Data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;
    use lsf_core::ingest::IngestError;

    #[test]
    fn table() {
        let cases: Vec<(anyhow::Error, ExitKind)> = vec![
            (ConfigError::UnknownKey("x".into()).into(), ExitKind::Usage),
            (UsageError("need --encoder".into()).into(), ExitKind::Usage),
            (PipelineError::UnknownPermutation(9).into(), ExitKind::Usage),
            (
                IngestError::UnknownColumn {
                    source_name: "a.csv".into(),
                    column: "ECG".into(),
                }
                .into(),
                ExitKind::Data,
            ),
            (std::io::Error::other("gone").into(), ExitKind::Data),
            (VqError::NonFiniteLoss { step: 3 }.into(), ExitKind::Numeric),
            (
                PipelineError::Fusion(FusionError::NonFiniteLoss { epoch: 1 }).into(),
                ExitKind::Numeric,
            ),
            (
                PipelineError::Fusion(FusionError::Kernel(KernelError::NonFiniteGradient { name: "w".into() }))
                    .into(),
                ExitKind::Numeric,
            ),
            (
                BaselineError::NonFiniteLoss {
                    modality: "ECG".into(),
                    epoch: 0,
                }
                .into(),
                ExitKind::Numeric,
            ),
            (
                Err::<(), _>(VqError::NonFiniteLoss { step: 0 })
                    .context("training encoder")
                    .unwrap_err(),
                ExitKind::Numeric,
            ),
            (PipelineError::Fusion(FusionError::EmptyDataset).into(), ExitKind::Data),
        ];
        for (err, want) in cases {
            assert_eq!(classify(&err), want, "{err:#}");
        }
        assert_eq!(
            [ExitKind::Success, ExitKind::Usage, ExitKind::Data, ExitKind::Numeric].map(ExitKind::code),
            [0, 1, 2, 3]
        );
    }
}
