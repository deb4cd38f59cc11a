//! List-model oracle for the replay buffers, shared with the acceptance run.

#![allow(dead_code)]

use lcsac::replay::{ContextBuffer, RlBuffer, RlTuple, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every transition ever pushed, tagged with its sequence number and
/// episode id.
pub struct ListModel {
    pub capacity: usize,
    pub history: Vec<Transition>,
    pub episode_of: Vec<u64>,
    episode: u64,
}

impl ListModel {
    pub fn new(capacity: usize) -> Self {
        ListModel {
            capacity,
            history: Vec::new(),
            episode_of: Vec::new(),
            episode: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        self.episode_of.push(self.episode);
        if t.done {
            self.episode += 1;
        }
        self.history.push(t);
    }

    pub fn oldest(&self) -> usize {
        self.history.len().saturating_sub(self.capacity)
    }

    pub fn at_slot(&self, slot: usize) -> Option<&Transition> {
        (self.oldest()..self.history.len())
            .find(|seq| seq % self.capacity == slot)
            .map(|seq| &self.history[seq])
    }

    /// Start sequence numbers of every valid window, oldest episode first.
    pub fn windows(&self, l: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for seq in 0..self.history.len() {
            if !self.history[seq].done {
                continue;
            }
            if start >= self.oldest() && seq + 1 - start >= l {
                out.extend(start..=seq + 1 - l);
            }
            start = seq + 1;
        }
        out
    }
}

pub fn transition(rng: &mut ChaCha8Rng, seq: usize, p_done: f64) -> Transition {
    Transition {
        s: vec![seq as f64, rng.random_range(-1.0..1.0)],
        a: vec![rng.random_range(-1.0..1.0)],
        r: seq as f64,
        s_next: vec![seq as f64 + 1.0, rng.random_range(-1.0..1.0)],
        done: rng.random_bool(p_done),
    }
}

pub fn run_context_ops(seed: u64, ops: usize, capacity: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ContextBuffer::new(2, 1, capacity);
    let mut model = ListModel::new(capacity);
    for op in 0..ops {
        if rng.random_bool(0.8) {
            let t = transition(&mut rng, model.history.len(), 0.08);
            buf.push(&t).unwrap();
            model.push(t);
            continue;
        }
        assert_eq!(buf.len(), model.history.len().min(capacity), "op {op}");
        let slot = rng.random_range(0..capacity);
        assert_eq!(buf.get(slot).as_ref(), model.at_slot(slot), "op {op} slot {slot}");

        let l = rng.random_range(1..=6);
        let n = rng.random_range(1..=4);
        let windows = model.windows(l);
        assert_eq!(buf.window_count(l), windows.len() as u64, "op {op}");
        let sample_seed: u64 = rng.random();
        let got = buf.sample_segments(n, l, &mut ChaCha8Rng::seed_from_u64(sample_seed));
        if windows.is_empty() {
            assert!(matches!(got, Err(lcsac::Error::InsufficientData(_))), "op {op}");
            continue;
        }
        let got = got.unwrap();
        let mut draw = ChaCha8Rng::seed_from_u64(sample_seed);
        for i in 0..n {
            let start = windows[draw.random_range(0..windows.len() as u64) as usize];
            assert_eq!(got.segment(i), &model.history[start..start + l], "op {op} segment {i}");
            assert_eq!(got.source(i), start as u64..(start + l) as u64);
        }
    }
}

pub fn rl_tuple(rng: &mut ChaCha8Rng, seq: usize) -> RlTuple {
    RlTuple {
        c: vec![seq as f64, rng.random()],
        s: vec![rng.random()],
        a: vec![rng.random_range(-1.0..1.0)],
        r: seq as f64,
        s_next: vec![rng.random()],
        c_next: vec![rng.random(), rng.random()],
        done: rng.random_bool(0.1),
    }
}

pub fn run_rl_ops(seed: u64, ops: usize, capacity: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = RlBuffer::new(2, 1, 1, capacity);
    let mut history: Vec<RlTuple> = Vec::new();
    for op in 0..ops {
        if history.is_empty() || rng.random_bool(0.7) {
            let t = rl_tuple(&mut rng, history.len());
            buf.push(&t).unwrap();
            history.push(t);
            continue;
        }
        let oldest = history.len().saturating_sub(capacity);
        assert_eq!(buf.len(), history.len() - oldest);
        let sample_seed: u64 = rng.random();
        let n = rng.random_range(1..=8);
        let batch = buf.sample(n, &mut ChaCha8Rng::seed_from_u64(sample_seed)).unwrap();
        let mut draw = ChaCha8Rng::seed_from_u64(sample_seed);
        for i in 0..n {
            let slot = draw.random_range(0..buf.len());
            let seq = (oldest..history.len()).find(|s| s % capacity == slot).unwrap();
            assert_eq!(batch.tuple(i), history[seq], "op {op} row {i}");
            assert_eq!(batch.indices[i], slot);
        }
    }
}

/// Pushes `pushes` transitions into a buffer of `capacity`, samples
/// `segments` windows of length `l` and counts those that leave one episode
/// or reach back past the oldest resident transition.
pub fn segment_crossings(seed: u64, capacity: usize, pushes: usize, l: usize, segments: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = ContextBuffer::new(2, 1, capacity);
    let mut model = ListModel::new(capacity);
    for seq in 0..pushes {
        let t = transition(&mut rng, seq, 0.03);
        buf.push(&t).unwrap();
        model.push(t);
    }
    let mut crossings = 0;
    let mut sampled = 0;
    while sampled < segments {
        let batch = buf.sample_segments(500, l, &mut rng).unwrap();
        for seg in batch.segments() {
            let first = seg[0].r as usize;
            let episode = model.episode_of[first];
            let same = seg.iter().enumerate().all(|(k, t)| {
                let seq = t.r as usize;
                seq == first + k && model.episode_of[seq] == episode && (!t.done || k == l - 1)
            });
            if !same || first < model.oldest() {
                crossings += 1;
            }
        }
        sampled += 500;
    }
    crossings
}
