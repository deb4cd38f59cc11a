//! Synthetic segment families for checking that the contrastive encoder can
//! learn predictable structure.
//!
//! Each segment drifts with a constant per-segment velocity, so the last
//! transition is a deterministic function of the earlier ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{mi_lower_bound, ContextEncoder, EncoderConfig};
use crate::error::Result;
use crate::optim::{Adam, AdamState};
use crate::replay::{SegmentBatch, Transition};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

/// `n` segments of length `l`. Segment `i` starts at a uniform point of the
/// unit box and repeats a uniform action `v`; `s' = s + 0.1 v` and
/// `r = -|s'|`.
pub fn drift_family<R: Rng + ?Sized>(n: usize, l: usize, rng: &mut R) -> Result<SegmentBatch> {
    let segments = (0..n)
        .map(|_| {
            let mut s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            (0..l)
                .map(|k| {
                    let next = [s[0] + 0.1 * v[0], s[1] + 0.1 * v[1]];
                    let t = Transition {
                        s: s.to_vec(),
                        a: v.to_vec(),
                        r: -next[0].hypot(next[1]),
                        s_next: next.to_vec(),
                        done: k == l - 1,
                    };
                    s = next;
                    t
                })
                .collect()
        })
        .collect();
    SegmentBatch::from_segments(segments)
}

/// Trains a fresh encoder on fresh drift batches and returns the mutual
/// information bound after every update.
pub fn train_on_drift(cfg: EncoderConfig, n: usize, l: usize, updates: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = ContextEncoder::new(cfg)?;
    let mut params = enc.init(&mut rng);
    let mut opt = AdamState::default();
    let adam = Adam::with_lr(lr);
    let mut out = Vec::with_capacity(updates);
    for _ in 0..updates {
        let batch = drift_family(n, l, &mut rng)?;
        let mut tape = crate::autodiff::Tape::new();
        let p = params.bind(&mut tape, true);
        let nce = enc.infonce(&mut tape, &p, &batch, &mut rng)?;
        let loss = tape.value(nce.loss).item();
        let grads = p.grads(&tape.backward(nce.loss)?);
        adam.step(&mut params, &grads, &mut opt)?;
        out.push(mi_lower_bound(loss, n));
    }
    Ok(out)
}

/// Trailing moving average with window `w`.
pub fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        acc += x;
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_segments_are_consistent() {
        let b = drift_family(3, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for seg in b.segments() {
            for w in seg.windows(2) {
                assert_eq!(w[0].s_next, w[1].s);
                assert_eq!(w[0].a, w[1].a);
            }
            assert!(seg[4].done && !seg[3].done);
        }
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }
}
