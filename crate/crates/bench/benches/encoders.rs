use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lsf_core::ingest::Window;
use lsf_core::nn::{seed_rng, Tensor};
use lsf_core::pipeline::{encode_modalities, permutation, BaselineEncoders};
use lsf_core::spectral::{spectral_image, stft, Colormap, SpectralConfig, StftConfig};
use lsf_core::vqvae::{quantize, VqVaeModel};

fn window() -> Window {
    Window {
        channel_name: "ECG".into(),
        start_index: 0,
        values: (0..128).map(|i| (i as f64 * 0.37).sin() + 0.1 * (i as f64 * 2.1).cos()).collect(),
        label: 0,
    }
}

fn spectral(c: &mut Criterion) {
    let w = window();
    c.bench_function("stft_128", |b| b.iter(|| stft(black_box(&w.values), &StftConfig::default()).unwrap()));
    let (cfg, map) = (SpectralConfig::default(), Colormap::default());
    c.bench_function("spectral_image", |b| b.iter(|| spectral_image(black_box(&w), &cfg, &map).unwrap()));
}

fn quantizer(c: &mut Criterion) {
    let mut rng = seed_rng(1);
    let codebook = Tensor::from_fn(&[32, 16], |_| rng.normal() as f32);
    let z = Tensor::from_fn(&[16, 16, 16], |_| rng.normal() as f32);
    c.bench_function("quantize_k32_d16", |b| b.iter(|| quantize(black_box(&z), &codebook).unwrap()));
}

fn encoders(c: &mut Criterion) {
    let all = permutation(6).unwrap();
    let vq = VqVaeModel::new(32, 16, 0).unwrap().into_inference();
    let base = BaselineEncoders::untrained(&all, 16, 0).unwrap();
    let img = spectral_image(&window(), &SpectralConfig::default(), &Colormap::default()).unwrap();
    let images = all.iter().map(|m| (m.clone(), vec![img.clone()])).collect();

    let mut group = c.benchmark_group("encode");
    group.sample_size(10);
    for m in [1, 3, 6] {
        let order = &all[..m];
        group.bench_with_input(BenchmarkId::new("unified", m), &m, |b, _| {
            b.iter(|| encode_modalities(&vq, &images, order).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("baseline", m), &m, |b, _| {
            b.iter(|| encode_modalities(&base, &images, order).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, spectral, quantizer, encoders);
criterion_main!(benches);
