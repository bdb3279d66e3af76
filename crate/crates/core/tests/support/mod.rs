//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use lsf_core::fusion::{bce_with_logit, HeadArch, HeadConfig};
use lsf_core::nn::{sigmoid, Gradients, Layer, ParamStore, SplitMix64, Tensor};

/// Central finite differences of a scalar function at `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max componentwise error, relative to the larger of the two gradients'
/// max-norms.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

/// Brute-force nearest codebook row, lowest index on ties.
pub fn nearest_row(v: &[f64], rows: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, r) in rows.iter().enumerate() {
        let d: f64 = v.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// AUC by counting every positive/negative pair (ties count one half).
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Naive DFT of one real frame, bin `f` of `n`.
pub fn naive_dft_bin(frame: &[f64], f: usize) -> (f64, f64) {
    let n = frame.len() as f64;
    frame.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &x)| {
        let ang = -2.0 * std::f64::consts::PI * (f as f64) * (t as f64) / n;
        (re + x * ang.cos(), im + x * ang.sin())
    })
}

/// Counts conv2d multiplications with the six nested loops of a naive
/// implementation (padding positions skipped exactly as zero-padding would
/// multiply by zero, so they are still counted).
pub fn naive_conv_macs(cin: usize, cout: usize, h: usize, w: usize, k: usize, s: usize, p: usize) -> u64 {
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut count = 0u64;
    for _co in 0..cout {
        for _oy in 0..oh {
            for _ox in 0..ow {
                for _ci in 0..cin {
                    for _ky in 0..k {
                        for _kx in 0..k {
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    count
}

fn projected(layer: &Layer, params: &ParamStore<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let (y, _) = layer.forward(params, x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the input gradient and every parameter gradient
/// of `L = <r, layer(x)>`.
pub fn layer_gradient_error(layer: &Layer, x: Tensor<f64>, h: f64, rng: &mut SplitMix64) -> f64 {
    let mut params = ParamStore::<f64>::new();
    layer.init_params(&mut params, rng);
    let out_shape = layer.output_shape(x.shape()).unwrap();
    let r = Tensor::from_fn(&out_shape, |_| rng.uniform(-1.0, 1.0));

    let (_, cache) = layer.forward(&params, &x).unwrap();
    let mut grads = Gradients::new();
    let gx = layer.backward(&params, &cache, &r, &mut grads).unwrap();

    let mut worst = {
        let shape = x.shape().to_vec();
        let mut f = |v: &[f64]| {
            let xt = Tensor::from_vec(shape.clone(), v.to_vec()).unwrap();
            projected(layer, &params, &xt, &r)
        };
        let numeric = central_difference(&mut f, x.data(), h);
        relative_error(gx.data(), &numeric)
    };

    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let base = params.get(&name).unwrap().clone();
        let analytic = grads
            .get(&name)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; base.len()]);
        let mut probe = params.clone();
        let mut f = |v: &[f64]| {
            probe.get_mut(&name).unwrap().data_mut().copy_from_slice(v);
            projected(layer, &probe, &x, &r)
        };
        let numeric = central_difference(&mut f, base.data(), h);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Worst relative error over every parameter gradient of the classifier
/// head's BCE loss, for random parameters, inputs and label.
pub fn head_gradient_error(cfg: HeadConfig, h: f64, rng: &mut SplitMix64) -> f64 {
    let arch = HeadArch::new(cfg).unwrap();
    let mut params = ParamStore::<f64>::new();
    for l in arch.layers() {
        l.init_params(&mut params, rng);
    }
    let steps: Vec<Tensor<f64>> = (0..cfg.seq_len)
        .map(|_| Tensor::from_fn(&arch.step_shape(), |_| rng.uniform(-1.0, 1.0)))
        .collect();
    let label = rng.below(2) as u8;
    let refs: Vec<&Tensor<f64>> = steps.iter().collect();
    let (logit, cache) = arch.forward(&params, &refs).unwrap();
    let mut grads = Gradients::new();
    arch.backward(&params, &cache, sigmoid(logit) - label as f64, &mut grads).unwrap();

    let names: Vec<String> = params.names().map(String::from).collect();
    let mut worst = 0.0f64;
    for name in names {
        let base = params.get(&name).unwrap().clone();
        let mut probe = params.clone();
        let mut f = |v: &[f64]| {
            probe.get_mut(&name).unwrap().data_mut().copy_from_slice(v);
            bce_with_logit(arch.forward(&probe, &refs).unwrap().0, label)
        };
        let numeric = central_difference(&mut f, base.data(), h);
        let analytic = grads.get(&name).unwrap().data().to_vec();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
