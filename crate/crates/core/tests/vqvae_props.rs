//! Quantizer, straight-through gradient and serialization properties.

mod support;

use lsf_core::nn::{seed_rng, Tensor};
use lsf_core::spectral::{spectral_image, Colormap, SpectralConfig};
use lsf_core::ingest::Window;
use lsf_core::vqvae::{
    gather, quantize, sample_gradients, train_vqvae, vq_loss, VqConfig, VqError, VqVaeModel,
    CODEBOOK,
};
use lsf_core::weights::WeightsError;
use support::{central_difference, nearest_row};

#[test]
fn quantizer_matches_exhaustive_search() {
    let mut rng = seed_rng(1000);
    for trial in 0..1000 {
        let k = 2 + rng.below(40);
        let d = 1 + rng.below(8);
        let (h, w) = (1 + rng.below(4), 1 + rng.below(4));
        let mut rows: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| (rng.normal() as f32) as f64).collect())
            .collect();
        // Plant duplicates so the tie-break is exercised.
        if k > 3 && rng.next_f64() < 0.5 {
            let src = rng.below(k);
            let dst = rng.below(k);
            rows[dst] = rows[src].clone();
        }
        let cb = Tensor::from_vec(
            vec![k, d],
            rows.iter().flatten().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let z = Tensor::from_fn(&[d, h, w], |_| rng.normal() as f32);
        let code = quantize(&z, &cb).unwrap();
        let plane = h * w;
        for p in 0..plane {
            let v: Vec<f64> = (0..d).map(|c| z.data()[c * plane + p] as f64).collect();
            assert_eq!(code.indices[p] as usize, nearest_row(&v, &rows), "trial {trial} position {p}");
        }
    }
}

#[test]
fn straight_through_gradient_matches_surrogate() {
    let model = VqVaeModel::new(16, 4, 3).unwrap();
    let params = model.params().cast::<f64>();
    let mut rng = seed_rng(17);
    let x = Tensor::from_fn(&[3, 128, 128], |_| rng.next_f64());
    let beta = 0.25;
    let decoder = model.decoder().unwrap();
    let out = sample_gradients(model.encoder(), decoder, &params, &x, beta).unwrap();

    // Codebook held fixed. The decoder input is z_e + sg(z_q − z_e), so a
    // perturbation of z_e shifts it one-for-one; z_q is a constant in the
    // commitment term.
    let cb = params.get(CODEBOOK).unwrap();
    let z_q = gather(cb, &out.indices, 16, 16);
    let z_e = out.z_e.clone();
    let mut all: Vec<usize> = (0..z_e.len()).collect();
    rng.shuffle(&mut all);
    let coords = &all[..48];
    let mut f = |sub: &[f64]| {
        let mut z = z_e.clone();
        let mut dec_in = z_q.clone();
        for (&i, &v) in coords.iter().zip(sub) {
            z.data_mut()[i] = v;
            dec_in.data_mut()[i] += v - z_e.data()[i];
        }
        let x_hat = decoder.infer(&params, &dec_in).unwrap();
        let r = vq_loss(&x, &x_hat, &z, &z_q, beta).unwrap();
        r.reconstruction + r.commitment
    };
    let base: Vec<f64> = coords.iter().map(|&i| z_e.data()[i]).collect();
    let numeric = central_difference(&mut f, &base, 1e-4);
    let analytic: Vec<f64> = coords.iter().map(|&i| out.grad_z_e.data()[i]).collect();
    let err = support::relative_error(&analytic, &numeric);
    assert!(err < 1e-3, "relative error {err:e}");
}

#[test]
fn training_is_deterministic() {
    let imgs = lsf_core::synthetic::generic_images(6, 4);
    let cfg = VqConfig {
        codebook_size: 8,
        embedding_dim: 4,
        steps: 3,
        batch: 2,
        seed: 9,
        ..VqConfig::default()
    };
    let (a, ca) = train_vqvae(&imgs, &cfg).unwrap();
    let (b, cb) = train_vqvae(&imgs, &cfg).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.params(), b.params());
    assert_eq!(ca.len(), 3);
    assert_ne!(a.params(), VqVaeModel::new(8, 4, 9).unwrap().params());
}

fn sample_image() -> lsf_core::spectral::SpectralImage {
    let mut rng = seed_rng(23);
    let w = Window {
        channel_name: "EDA".into(),
        start_index: 96,
        values: (0..128).map(|_| rng.normal()).collect(),
        label: 1,
    };
    spectral_image(&w, &SpectralConfig::default(), &Colormap::default()).unwrap()
}

#[test]
fn save_load_preserves_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vq.lsfw");
    let model = VqVaeModel::new(8, 4, 2).unwrap();
    model.save(&path).unwrap();
    let back = VqVaeModel::load(&path).unwrap();
    let img = sample_image();
    let a = model.encode(img.pixels()).unwrap();
    let b = back.encode(img.pixels()).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let code = back.latent(&img).unwrap();
    assert_eq!(code.source.name, "EDA");
    assert_eq!(code.source.start_index, 96);
}

#[test]
fn corrupt_files_fail_distinctly() {
    let model = VqVaeModel::new(4, 2, 0).unwrap();
    let mut buf = Vec::new();
    model.write_to(&mut buf).unwrap();

    let mut bad = buf.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(VqVaeModel::read_from(&bad[..]), Err(VqError::Weights(WeightsError::BadMagic))));

    let mut v = buf.clone();
    v[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        VqVaeModel::read_from(&v[..]),
        Err(VqError::Weights(WeightsError::VersionMismatch { found: 7, .. }))
    ));

    let cut = &buf[..buf.len() - 10];
    match VqVaeModel::read_from(cut) {
        Err(VqError::Weights(WeightsError::TruncatedPayload { tensor })) => {
            assert!(model.params().contains(&tensor), "{tensor}");
        }
        other => panic!("unexpected {other:?}"),
    }
}
