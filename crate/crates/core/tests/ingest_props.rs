//! Property tests for cleaning, resampling and windowing.

use lsf_core::ingest::{
    forward_fill, full_window_count, prepare_windows, resample_uniform, slide_windows, Channel,
    LabelTrack, MultimodalStream, WindowConfig,
};
use lsf_core::nn::seed_rng;
use proptest::prelude::*;

/// Window starts by direct enumeration.
fn enumerate_starts(n: usize, len: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + len <= n {
        starts.push(s);
        s += stride;
    }
    starts
}

fn gappy() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.7, -100.0f64..100.0), 1..200)
        .prop_filter("needs one observation", |v| v.iter().any(Option::is_some))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn forward_fill_is_idempotent(samples in gappy()) {
        let c = Channel::new("EDA", 4.0, samples).unwrap();
        let once = forward_fill(&c).unwrap();
        prop_assert!(once.is_complete());
        let twice = forward_fill(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn forward_fill_keeps_observed_values(samples in gappy()) {
        let c = Channel::new("EDA", 4.0, samples.clone()).unwrap();
        let filled = forward_fill(&c).unwrap();
        for (orig, got) in samples.iter().zip(&filled.samples) {
            if let Some(v) = orig {
                prop_assert_eq!(Some(*v), *got);
            }
        }
    }

    #[test]
    fn resampling_at_same_rate_is_identity(values in prop::collection::vec(-1e3f64..1e3, 1..300), rate in 1.0f64..700.0) {
        let c = Channel::from_values("BVP", rate, &values).unwrap();
        let r = resample_uniform(&c, rate).unwrap();
        prop_assert_eq!(r.values().unwrap(), values);
    }

    #[test]
    fn windows_are_exact_slices(
        values in prop::collection::vec(-50.0f64..50.0, 1..600),
        len in 1usize..64,
        stride_frac in 0.05f64..1.0,
        zero_fill in any::<bool>(),
    ) {
        let stride = ((len as f64 * stride_frac).ceil() as usize).clamp(1, len);
        let c = Channel::from_values("ECG", 64.0, &values).unwrap();
        let cfg = WindowConfig { window_len: len, stride, zero_fill };
        match slide_windows(&c, &LabelTrack::default(), &cfg) {
            Ok(ws) => {
                for w in &ws {
                    prop_assert_eq!(w.values.len(), len);
                    let end = (w.start_index + len).min(values.len());
                    let real = end - w.start_index;
                    prop_assert_eq!(&w.values[..real], &values[w.start_index..end]);
                    prop_assert!(w.values[real..].iter().all(|&v| v == 0.0));
                }
            }
            Err(_) => prop_assert!(values.len() < len && !zero_fill),
        }
    }
}

#[test]
fn window_counts_match_enumeration() {
    let mut rng = seed_rng(77);
    for _ in 0..1000 {
        let n = rng.below(2000);
        let len = 1 + rng.below(256);
        let stride = 1 + rng.below(len);
        let starts = enumerate_starts(n, len, stride);
        assert_eq!(full_window_count(n, len, stride), starts.len(), "n={n} len={len} stride={stride}");

        let c = Channel::from_values("ACC_X", 32.0, &vec![1.0; n]).unwrap();
        let cfg = WindowConfig { window_len: len, stride, zero_fill: true };
        let ws = slide_windows(&c, &LabelTrack::default(), &cfg).unwrap();
        let covered = starts.last().map_or(0, |s| s + len);
        let expected = starts.len() + usize::from(covered < n);
        assert_eq!(ws.len(), expected, "n={n} len={len} stride={stride}");
        let got: Vec<usize> = ws.iter().take(starts.len()).map(|w| w.start_index).collect();
        assert_eq!(got, starts);
    }
}

#[test]
fn all_channels_share_window_starts() {
    let mut rng = seed_rng(5);
    for _ in 0..50 {
        let n = 200 + rng.below(400);
        let chans = vec![
            Channel::from_values("ACC_X", 32.0, &(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap(),
            Channel::from_values("EDA", 4.0, &(0..n / 8).map(|i| i as f64).collect::<Vec<_>>()).unwrap(),
            Channel::from_values("BVP", 64.0, &(0..2 * n).map(|i| i as f64).collect::<Vec<_>>()).unwrap(),
        ];
        let stream = MultimodalStream::new(chans, 0.0, LabelTrack::default()).unwrap();
        let stride = 1 + rng.below(32);
        let cfg = WindowConfig { window_len: 32, stride, zero_fill: true };
        let per = prepare_windows(&stream, 16.0, &cfg).unwrap();
        let reference: Vec<usize> = per["ACC_X"].iter().map(|w| w.start_index).collect();
        assert!(!reference.is_empty());
        for ws in per.values() {
            let starts: Vec<usize> = ws.iter().map(|w| w.start_index).collect();
            assert_eq!(starts, reference);
        }
    }
}
