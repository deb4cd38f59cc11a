//! Replay buffers against a list model that keeps the full push history.

mod support;

use lcsac::replay::{ContextBuffer, RlBuffer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use support::{rl_tuple, run_context_ops, run_rl_ops, segment_crossings, transition};

#[test]
fn context_buffer_matches_list_model_over_ten_thousand_ops() {
    for (seed, capacity) in [(1, 64), (2, 257), (3, 1000), (4, 5)] {
        run_context_ops(seed, 10_000, capacity);
    }
}

#[test]
fn rl_buffer_matches_list_model_over_ten_thousand_ops() {
    for (seed, capacity) in [(5, 50), (6, 999)] {
        run_rl_ops(seed, 10_000, capacity);
    }
}

#[test]
fn no_segment_crosses_an_episode_boundary() {
    // pushes past capacity so the oldest episode is truncated
    assert_eq!(segment_crossings(11, 5_000, 7_321, 20, 100_000), 0);
}

#[test]
fn windows_are_drawn_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut buf = ContextBuffer::new(2, 1, 1_000);
    // episodes of lengths 5, 9, 14 and 3 with l = 4 give 2 + 6 + 11 + 0 windows
    let mut seq = 0;
    for len in [5, 9, 14, 3] {
        for k in 0..len {
            let mut t = transition(&mut rng, seq, 0.0);
            t.done = k == len - 1;
            buf.push(&t).unwrap();
            seq += 1;
        }
    }
    let l = 4;
    let windows = buf.window_count(l) as usize;
    assert_eq!(windows, 19);
    let draws = 57_000;
    let mut counts = std::collections::BTreeMap::new();
    let batch = buf.sample_segments(draws, l, &mut rng).unwrap();
    for i in 0..draws {
        *counts.entry(batch.source(i).start).or_insert(0usize) += 1;
    }
    assert_eq!(counts.len(), windows);
    let expected = draws as f64 / windows as f64;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((windows - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

#[test]
fn rl_indices_are_uniform_within_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut buf = RlBuffer::new(2, 1, 1, 16);
    for seq in 0..40 {
        buf.push(&rl_tuple(&mut rng, seq)).unwrap();
    }
    let draws = 160_000;
    let mut counts = [0usize; 16];
    for i in buf.sample_indices(draws, &mut rng).unwrap() {
        counts[i] += 1;
    }
    let p = 1.0 / 16.0;
    let (mu, sigma) = (draws as f64 * p, (draws as f64 * p * (1.0 - p)).sqrt());
    for (slot, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mu).abs() < 3.0 * sigma, "slot {slot}: {c} vs {mu} ± {sigma}");
    }
}

proptest! {
    #[test]
    fn short_random_histories_match_the_model(seed in any::<u64>(), capacity in 1usize..40) {
        run_context_ops(seed, 400, capacity);
    }

    #[test]
    fn snapshots_round_trip(seed in any::<u64>(), pushes in 0usize..60, capacity in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ContextBuffer::new(2, 1, capacity);
        let mut rl = RlBuffer::new(2, 1, 1, capacity);
        for seq in 0..pushes {
            buf.push(&transition(&mut rng, seq, 0.2)).unwrap();
            rl.push(&rl_tuple(&mut rng, seq)).unwrap();
        }
        prop_assert_eq!(&ContextBuffer::decode_snapshot(&buf.encode_snapshot()).unwrap(), &buf);
        prop_assert_eq!(&RlBuffer::decode_snapshot(&rl.encode_snapshot()).unwrap(), &rl);
    }
}
