//! Analytic backward passes against central finite differences (h = 1e−4),
//! 20 randomized configurations per layer kind, run in f64.

mod support;

use lsf_core::nn::{seed_rng, Gradients, Layer, ParamStore, SplitMix64, Tensor};
use proptest::prelude::*;
use support::layer_gradient_error;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;
const TRIALS: usize = 20;

fn random_input(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

fn run_trials(kind: &str, mut make: impl FnMut(&mut SplitMix64) -> (Layer, Tensor<f64>)) {
    let mut rng = seed_rng(0xC0FFEE ^ kind.len() as u64);
    for trial in 0..TRIALS {
        let (layer, x) = make(&mut rng);
        let err = layer_gradient_error(&layer, x, H, &mut rng);
        assert!(
            err < TOL,
            "{kind} trial {trial}: relative error {err:e} for {layer:?}"
        );
    }
}

#[test]
fn conv2d_gradients() {
    run_trials("conv2d", |rng| {
        let k = 1 + rng.below(4);
        let s = 1 + rng.below(2);
        let p = rng.below(k.min(2) + 1);
        let h = k + rng.below(4);
        let w = k + rng.below(4);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let layer = Layer::conv2d("c", cin, cout, k, s, p);
        (layer, random_input(&[cin, h, w], rng))
    });
}

#[test]
fn conv_transpose2d_gradients() {
    run_trials("conv_transpose2d", |rng| {
        let k = 2 + rng.below(3);
        let s = 1 + rng.below(2);
        let p = rng.below(2);
        let h = 2 + rng.below(3);
        let w = 2 + rng.below(3);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let layer = Layer::conv_transpose2d("t", cin, cout, k, s, p);
        (layer, random_input(&[cin, h, w], rng))
    });
}

#[test]
fn dense_gradients() {
    run_trials("dense", |rng| {
        let rows = 1 + rng.below(3);
        let cols = 1 + rng.below(4);
        let out = 1 + rng.below(5);
        let layer = Layer::dense("d", rows * cols, out);
        (layer, random_input(&[rows, cols], rng))
    });
}

#[test]
fn relu_gradients() {
    run_trials("relu", |rng| {
        let n = 1 + rng.below(12);
        // Keep samples off the kink at 0, where the derivative is undefined.
        let x = Tensor::from_fn(&[n], |_| {
            let m = rng.uniform(0.05, 1.0);
            if rng.next_f64() < 0.5 {
                -m
            } else {
                m
            }
        });
        (Layer::relu("r"), x)
    });
}

#[test]
fn sigmoid_gradients() {
    run_trials("sigmoid", |rng| {
        let n = 1 + rng.below(12);
        let x = Tensor::from_fn(&[n], |_| rng.uniform(-4.0, 4.0));
        (Layer::sigmoid("s"), x)
    });
}

#[test]
fn residual_block_gradients() {
    run_trials("residual_block", |rng| {
        let c = 1 + rng.below(3);
        let hidden = 1 + rng.below(3);
        let k2 = if rng.next_f64() < 0.5 { 1 } else { 3 };
        let h = 2 + rng.below(3);
        let w = 2 + rng.below(3);
        let layer = Layer::residual("res", c, hidden, k2);
        (layer, random_input(&[c, h, w], rng))
    });
}

#[test]
fn recurrent_cell_gradients() {
    run_trials("recurrent_cell", |rng| {
        let xd = 1 + rng.below(5);
        let hd = 1 + rng.below(5);
        let layer = Layer::recurrent("gru", xd, hd);
        (layer, random_input(&[xd + hd], rng))
    });
}

fn all_kinds() -> Vec<(Layer, Vec<usize>)> {
    vec![
        (Layer::conv2d("c", 2, 3, 3, 2, 1), vec![2, 6, 5]),
        (Layer::conv_transpose2d("t", 2, 3, 4, 2, 1), vec![2, 3, 4]),
        (Layer::dense("d", 6, 4), vec![6]),
        (Layer::relu("r"), vec![2, 3]),
        (Layer::sigmoid("s"), vec![7]),
        (Layer::residual("res", 2, 3, 3), vec![2, 4, 4]),
        (Layer::recurrent("gru", 3, 4), vec![7]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_and_backward_stay_finite(seed in any::<u64>(), which in 0usize..7) {
        let (layer, shape) = all_kinds().swap_remove(which);
        let mut rng = seed_rng(seed);
        let mut params = ParamStore::<f32>::new();
        layer.init_params(&mut params, &mut rng);
        let x = Tensor::from_fn(&shape, |_| rng.uniform(-10.0, 10.0) as f32);
        let (y, cache) = layer.forward(&params, &x).unwrap();
        prop_assert!(y.is_finite());
        let g = Tensor::from_fn(y.shape(), |_| rng.uniform(-10.0, 10.0) as f32);
        let mut grads = Gradients::new();
        let gx = layer.backward(&params, &cache, &g, &mut grads).unwrap();
        prop_assert!(gx.is_finite());
        for (_, t) in grads.iter() {
            prop_assert!(t.is_finite());
        }
    }
}
