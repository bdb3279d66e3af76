use lsf_core::fusion::TrainConfig;
use lsf_core::ingest::WindowConfig;
use lsf_core::pipeline::*;
use lsf_core::spectral::{Colormap, SpectralConfig};
use lsf_core::synthetic::{generic_images, stress_stream, StressStreamConfig, NOISE_CHANNEL};
use lsf_core::vqvae::{train_vqvae, VqConfig};

#[test]
fn fusion_accuracy_is_stable_across_modality_counts() {
    let vq_cfg = VqConfig { steps: 100, ..VqConfig::default() };
    let (model, _) = train_vqvae(&generic_images(32, 0), &vq_cfg).unwrap();
    let model = model.into_inference();
    let stream = stress_stream(&StressStreamConfig {
        segments: 24,
        with_noise_channel: true,
        ..StressStreamConfig::default()
    })
    .unwrap();
    let set = window_set(&stream, 64.0, &WindowConfig::default()).unwrap();
    let mut all = permutation(6).unwrap();
    all.push(NOISE_CHANNEL.to_string());
    let images = images_for(&set, &all, &SpectralConfig::default(), &Colormap::default()).unwrap();
    let encoded = encode_modalities(&model, &images, &all).unwrap();
    assert_eq!(encoded.encoder_loads, 1);
    let cfg = ExperimentConfig {
        seq_len: 4,
        seq_stride: 2,
        train: TrainConfig { epochs: 30, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    };
    let acc: Vec<f64> = [1, 2, 3, 6]
        .iter()
        .map(|&id| {
            let order = permutation(id).unwrap();
            fit_and_evaluate(&encoded, &set.labels, &order, 16, &cfg).unwrap().test_metrics.accuracy
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for &a in &acc {
        assert!(a >= best - 0.05, "accuracy {acc:?} drops more than 0.05");
        best = best.max(a);
    }
    let noisy = fit_and_evaluate(&encoded, &set.labels, &all, 16, &cfg).unwrap().test_metrics.accuracy;
    assert!(acc[3] - noisy < 0.10, "noise modality: {} -> {noisy}", acc[3]);
}
