//! Analytic cost model against loop-counting oracles and scaling invariants.

mod support;

use lsf_core::costmodel::{layer_macs, memory_traffic, CostConfig, ScalingRow};
use lsf_core::nn::{seed_rng, Layer};
use lsf_core::pipeline::{baseline_cost, permutation, pipeline_shape, unified_cost, BaselineEncoders};
use lsf_core::spectral::SpectralConfig;
use lsf_core::vqvae::VqVaeModel;

fn naive_dense_macs(inputs: usize, outputs: usize) -> u64 {
    let mut n = 0;
    for _ in 0..outputs {
        for _ in 0..inputs {
            n += 1;
        }
    }
    n
}

#[test]
fn layer_macs_match_loop_counts() {
    let mut rng = seed_rng(42);
    for trial in 0..200 {
        if trial % 4 == 3 {
            let (i, o) = (1 + rng.below(300), 1 + rng.below(300));
            let l = Layer::dense("d", i, o);
            assert_eq!(layer_macs(&l, &[i]).unwrap(), naive_dense_macs(i, o));
            continue;
        }
        let k = 1 + rng.below(5);
        let s = 1 + rng.below(3);
        let p = rng.below(k);
        let h = k + rng.below(40);
        let w = k + rng.below(40);
        let (cin, cout) = (1 + rng.below(8), 1 + rng.below(8));
        let l = Layer::conv2d("c", cin, cout, k, s, p);
        assert_eq!(
            layer_macs(&l, &[cin, h, w]).unwrap(),
            support::naive_conv_macs(cin, cout, h, w, k, s, p),
            "cin={cin} cout={cout} h={h} w={w} k={k} s={s} p={p}"
        );
    }
}

#[test]
fn dense_traffic_example() {
    let l = Layer::dense("d", 64, 1);
    assert_eq!(memory_traffic(&l, &[64], 1, 4).unwrap(), (516, 4));
    let (f2, w2) = memory_traffic(&l, &[64], 2, 4).unwrap();
    assert_eq!((f2, w2), (516 + 64 * 4, 8));
    assert_eq!(memory_traffic(&Layer::relu("r"), &[10], 1, 4).unwrap(), (40, 40));
}

struct Systems {
    model: VqVaeModel,
    baseline: BaselineEncoders,
}

fn systems() -> Systems {
    Systems {
        model: VqVaeModel::new(32, 16, 0).unwrap().into_inference(),
        baseline: BaselineEncoders::untrained(&permutation(6).unwrap(), 16, 0).unwrap(),
    }
}

fn rows(sys: &Systems) -> Vec<ScalingRow> {
    let cfg = CostConfig::default();
    (1..=6)
        .map(|id| {
            let shape = pipeline_shape(&permutation(id).unwrap(), 8, 128, &SpectralConfig::default());
            let u = unified_cost(&sys.model, &shape, &cfg).unwrap();
            let b = baseline_cost(&sys.baseline, &shape, &cfg).unwrap();
            ScalingRow::from_costs(&u, &b, &cfg)
        })
        .collect()
}

#[test]
fn totals_equal_breakdown_sums_and_grow_with_m() {
    let sys = systems();
    let cfg = CostConfig::default();
    let mut prev: Option<[u64; 4]> = None;
    for id in 1..=6 {
        let shape = pipeline_shape(&permutation(id).unwrap(), 8, 128, &SpectralConfig::default());
        let costs = [
            unified_cost(&sys.model, &shape, &cfg).unwrap(),
            baseline_cost(&sys.baseline, &shape, &cfg).unwrap(),
        ];
        let mut now = [0u64; 4];
        for (i, c) in costs.iter().enumerate() {
            let t = c.total(&cfg);
            assert_eq!(t.macs, t.breakdown.iter().map(|r| r.macs).sum::<u64>());
            assert_eq!(t.params, t.breakdown.iter().map(|r| r.params).sum::<u64>());
            assert_eq!(t.fetch_bytes, t.breakdown.iter().map(|r| r.fetch_bytes).sum::<u64>());
            assert_eq!(t.write_bytes, t.breakdown.iter().map(|r| r.write_bytes).sum::<u64>());
            let parts = c.preprocess.macs + c.encode.macs + c.fuse.macs + c.classify.macs;
            assert_eq!(t.macs, parts);
            now[2 * i] = t.macs;
            now[2 * i + 1] = t.fetch_bytes + t.write_bytes;
        }
        if let Some(p) = prev {
            assert!(now.iter().zip(p).all(|(a, b)| *a >= b), "{p:?} -> {now:?}");
        }
        prev = Some(now);
        assert_eq!(costs[0].classify, costs[1].classify);
        assert_eq!(costs[0].fuse, costs[1].fuse);
    }
}

#[test]
fn encoder_counts_scale_only_for_the_baseline() {
    let t = rows(&systems());
    assert!(t.iter().all(|r| r.unified_loads == 1 && r.unified_params == t[0].unified_params));
    for (i, r) in t.iter().enumerate() {
        assert_eq!(r.m, i + 1);
        assert_eq!(r.baseline_loads, r.m);
        assert_eq!(r.baseline_params, r.m as u64 * t[0].baseline_params);
    }
}

#[test]
fn mac_columns_are_exactly_linear() {
    let t = rows(&systems());
    for col in [|r: &ScalingRow| r.unified_macs, |r: &ScalingRow| r.baseline_macs] {
        let d: Vec<i128> = t.windows(2).map(|w| col(&w[1]) as i128 - col(&w[0]) as i128).collect();
        assert!(d.iter().all(|&x| x == d[0]), "{d:?}");
    }
    assert!(t[1].baseline_macs - t[0].baseline_macs > t[1].unified_macs - t[0].unified_macs);
    let ratio = t[5].baseline_macs as f64 / t[5].unified_macs as f64;
    assert!(ratio >= 1.9, "ratio {ratio}");
}
