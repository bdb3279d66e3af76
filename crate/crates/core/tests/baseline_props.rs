//! Pretraining and splicing of the per-modality encoders.

use lsf_core::baseline::{pretrain_encoder, ModalityEncoder, PretrainConfig};
use lsf_core::nn::Tensor;
use lsf_core::synthetic::labeled_images;

fn cfg() -> PretrainConfig {
    PretrainConfig {
        samples: 16,
        embedding_dim: 8,
        lr: 1e-3,
        epochs: 10,
        batch: 16,
        seed: 5,
    }
}

#[test]
fn pretraining_learns_separable_images() {
    let data = labeled_images(16, 11);
    let (enc, curve) = pretrain_encoder("ECG", &data, &cfg()).unwrap();
    for pair in curve.windows(2) {
        assert!(pair[1].loss < pair[0].loss, "{curve:?}");
    }
    let correct = data
        .iter()
        .filter(|(img, label)| {
            let l = enc.logits(img).unwrap();
            u8::from(l[1] > l[0]) == *label
        })
        .count();
    assert!(correct as f64 / data.len() as f64 >= 0.9, "{correct}/{}", data.len());

    let spliced = enc.splice();
    let x = &data[3].0;
    let (_, caches) = enc.encoder().forward(enc.params(), x).unwrap();
    let full: Tensor<f32> = enc.encoder().forward(enc.params(), x).unwrap().0;
    let feat = spliced.features(x).unwrap();
    assert_eq!(feat, full);
    assert_eq!(caches.len(), enc.encoder().layers().len());
}

#[test]
fn equal_seeds_give_identical_encoders() {
    let data = labeled_images(4, 2);
    let c = PretrainConfig { samples: 4, epochs: 1, batch: 2, ..cfg() };
    let (a, ca) = pretrain_encoder("EDA", &data, &c).unwrap();
    let (b, cb) = pretrain_encoder("EDA", &data, &c).unwrap();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_ne!(a, ModalityEncoder::new("EDA", 8, c.seed).unwrap());
}

#[test]
fn save_and_load_spliced_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ecg.lsfw");
    let enc = ModalityEncoder::new("ECG", 8, 1).unwrap().splice();
    enc.save(&path).unwrap();
    assert_eq!(ModalityEncoder::load("ECG", &path).unwrap(), enc);
}
