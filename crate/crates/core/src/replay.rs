//! The two replay buffers.
//!
//! [`ContextBuffer`] keeps raw transitions plus the positions of episode
//! ends so that contiguous within-episode segments can be drawn for encoder
//! training. [`RlBuffer`] keeps context-augmented tuples whose contexts were
//! fixed when the tuple was collected.
//!
//! Both are FIFO rings. Internally every push gets a monotonically increasing
//! sequence number; the ring slot is `seq % capacity`.

use std::collections::VecDeque;

use rand::Rng;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_CAPACITY: usize = 1_000_000;

const BUFFER_MAGIC: &[u8; 8] = b"LCSACBF\0";
const KIND_CONTEXT: u8 = 0;
const KIND_RL: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    /// `(s, a, r)` concatenated, the encoder's per-step input.
    pub fn triple(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.s.len() + self.a.len() + 1);
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.a);
        v.push(self.r);
        v
    }
}

/// Context-augmented experience with contexts frozen at collection time.
#[derive(Debug, Clone, PartialEq)]
pub struct RlTuple {
    pub c: Vec<f64>,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub c_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-width rows in a ring.
#[derive(Debug, Clone, PartialEq)]
struct RowStore {
    width: usize,
    capacity: usize,
    data: Vec<f64>,
    done: Vec<bool>,
    pushed: u64,
}

impl RowStore {
    fn new(width: usize, capacity: usize) -> Self {
        RowStore {
            width,
            capacity,
            data: Vec::new(),
            done: Vec::new(),
            pushed: 0,
        }
    }

    fn len(&self) -> usize {
        self.done.len()
    }

    fn oldest_seq(&self) -> u64 {
        self.pushed - self.len() as u64
    }

    fn slot(&self, seq: u64) -> usize {
        (seq % self.capacity as u64) as usize
    }

    fn push(&mut self, row: &[f64], done: bool) {
        debug_assert_eq!(row.len(), self.width);
        if self.len() < self.capacity {
            self.data.extend_from_slice(row);
            self.done.push(done);
        } else {
            let slot = self.slot(self.pushed);
            self.data[slot * self.width..(slot + 1) * self.width].copy_from_slice(row);
            self.done[slot] = done;
        }
        self.pushed += 1;
    }

    fn row(&self, slot: usize) -> &[f64] {
        &self.data[slot * self.width..(slot + 1) * self.width]
    }

    fn encode(&self, w: &mut Writer) {
        w.u64(self.capacity as u64);
        w.u64(self.pushed);
        w.u64(self.len() as u64);
        w.f64s(&self.data);
        for &d in &self.done {
            w.u8(d as u8);
        }
    }

    fn decode(r: &mut Reader<'_>, width: usize) -> Result<Self> {
        let capacity = r.usize()?;
        let pushed = r.u64()?;
        let len = r.usize()?;
        if capacity == 0 {
            return Err(Error::Decode("zero capacity".into()));
        }
        if len as u64 != pushed.min(capacity as u64) {
            return Err(Error::Decode(format!(
                "length {len} inconsistent with {pushed} pushes into capacity {capacity}"
            )));
        }
        let numel = len
            .checked_mul(width)
            .ok_or_else(|| Error::Decode("length overflow".into()))?;
        let data = r.f64s(numel)?;
        let flags = r.take(len)?;
        let mut done = Vec::with_capacity(len);
        for &b in flags {
            match b {
                0 => done.push(false),
                1 => done.push(true),
                other => return Err(Error::Decode(format!("bad done flag {other}"))),
            }
        }
        Ok(RowStore {
            width,
            capacity,
            data,
            done,
            pushed,
        })
    }
}

fn check_width(what: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(what, &[want], &[got]));
    }
    Ok(())
}

/// A complete episode resident in the buffer, as inclusive sequence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpan {
    pub start: u64,
    pub end: u64,
}

impl EpisodeSpan {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn windows(&self, l: usize) -> u64 {
        (self.len() + 1).saturating_sub(l as u64)
    }
}

/// Transition ring with episode-end bookkeeping (`D_c`).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBuffer {
    state_dim: usize,
    action_dim: usize,
    store: RowStore,
    /// Sequence numbers of resident `done` entries, oldest first.
    ends: VecDeque<u64>,
    /// Most recent end evicted by overwriting.
    evicted_end: Option<u64>,
}

impl ContextBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ContextBuffer {
            state_dim,
            action_dim,
            store: RowStore::new(2 * state_dim + action_dim + 1, capacity),
            ends: VecDeque::new(),
            evicted_end: None,
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.store.capacity
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Total pushes since creation.
    pub fn pushed(&self) -> u64 {
        self.store.pushed
    }

    /// Ring slot that the next push writes.
    pub fn cursor(&self) -> usize {
        self.store.slot(self.store.pushed)
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        check_width("push_transition.s", t.s.len(), self.state_dim)?;
        check_width("push_transition.a", t.a.len(), self.action_dim)?;
        check_width("push_transition.s_next", t.s_next.len(), self.state_dim)?;

        if self.store.len() == self.store.capacity {
            let evicted = self.store.oldest_seq();
            if self.ends.front() == Some(&evicted) {
                self.ends.pop_front();
                self.evicted_end = Some(evicted);
            }
        }
        let mut row = Vec::with_capacity(self.store.width);
        row.extend_from_slice(&t.s);
        row.extend_from_slice(&t.a);
        row.push(t.r);
        row.extend_from_slice(&t.s_next);
        let seq = self.store.pushed;
        self.store.push(&row, t.done);
        if t.done {
            self.ends.push_back(seq);
        }
        Ok(())
    }

    /// Ring slots of resident episode ends, in insertion order.
    pub fn episode_ends(&self) -> Vec<usize> {
        self.ends.iter().map(|&s| self.store.slot(s)).collect()
    }

    /// Transition stored at ring `slot`.
    pub fn get(&self, slot: usize) -> Option<Transition> {
        (slot < self.len()).then(|| self.decode_row(slot))
    }

    /// Transition with global sequence number `seq`, if still resident.
    pub fn get_seq(&self, seq: u64) -> Option<Transition> {
        (seq >= self.store.oldest_seq() && seq < self.store.pushed)
            .then(|| self.decode_row(self.store.slot(seq)))
    }

    fn decode_row(&self, slot: usize) -> Transition {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let row = self.store.row(slot);
        Transition {
            s: row[..sd].to_vec(),
            a: row[sd..sd + ad].to_vec(),
            r: row[sd + ad],
            s_next: row[sd + ad + 1..].to_vec(),
            done: self.store.done[slot],
        }
    }

    /// Complete episodes whose every transition is still resident.
    pub fn episodes(&self) -> Vec<EpisodeSpan> {
        let oldest = self.store.oldest_seq();
        let mut prev = self.evicted_end;
        let mut out = Vec::with_capacity(self.ends.len());
        for &end in &self.ends {
            let start = prev.map_or(0, |p| p + 1);
            if start >= oldest {
                out.push(EpisodeSpan { start, end });
            }
            prev = Some(end);
        }
        out
    }

    /// Number of valid length-`l` windows currently resident.
    pub fn window_count(&self, l: usize) -> u64 {
        if l == 0 {
            return 0;
        }
        self.episodes().iter().map(|e| e.windows(l)).sum()
    }

    /// `n` segments of length `l`, each drawn uniformly (with replacement)
    /// from all resident within-episode windows.
    pub fn sample_segments<R: Rng + ?Sized>(&self, n: usize, l: usize, rng: &mut R) -> Result<SegmentBatch> {
        if n == 0 || l == 0 {
            return Err(Error::contract("segment count and length must be positive"));
        }
        let episodes = self.episodes();
        let mut cumulative = Vec::with_capacity(episodes.len());
        let mut total = 0u64;
        for e in &episodes {
            total += e.windows(l);
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::InsufficientData(format!(
                "no resident episode has length >= {l}"
            )));
        }
        let mut starts = Vec::with_capacity(n);
        let mut transitions = Vec::with_capacity(n * l);
        for _ in 0..n {
            let k = rng.random_range(0..total);
            let ep = cumulative.partition_point(|&c| c <= k);
            let before = if ep == 0 { 0 } else { cumulative[ep - 1] };
            let start = episodes[ep].start + (k - before);
            starts.push(start);
            for seq in start..start + l as u64 {
                transitions.push(self.decode_row(self.store.slot(seq)));
            }
        }
        Ok(SegmentBatch {
            n,
            l,
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            transitions,
            starts,
        })
    }

    pub fn encode_snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BUFFER_MAGIC);
        w.u32(crate::codec::FORMAT_VERSION);
        w.u8(KIND_CONTEXT);
        w.u64(self.state_dim as u64);
        w.u64(self.action_dim as u64);
        self.store.encode(&mut w);
        w.u64(self.ends.len() as u64);
        for &e in &self.ends {
            w.u64(e);
        }
        match self.evicted_end {
            Some(e) => {
                w.u8(1);
                w.u64(e);
            }
            None => w.u8(0),
        }
        w.finish()
    }

    pub fn decode_snapshot(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BUFFER_MAGIC)?;
        if r.u8()? != KIND_CONTEXT {
            return Err(Error::Decode("not a context-buffer snapshot".into()));
        }
        let state_dim = r.usize()?;
        let action_dim = r.usize()?;
        let width = snapshot_width(&[state_dim, state_dim, action_dim, 1])?;
        let store = RowStore::decode(&mut r, width)?;
        let n_ends = r.usize()?;
        if n_ends > store.len() {
            return Err(Error::Decode("more episode ends than entries".into()));
        }
        let mut ends = VecDeque::with_capacity(n_ends);
        for _ in 0..n_ends {
            let e = r.u64()?;
            if e < store.oldest_seq() || e >= store.pushed || ends.back().is_some_and(|&b| e <= b) {
                return Err(Error::Decode(format!("episode end {e} out of order or not resident")));
            }
            if !store.done[store.slot(e)] {
                return Err(Error::Decode(format!("episode end {e} is not a terminal entry")));
            }
            ends.push_back(e);
        }
        if store.done.iter().filter(|&&d| d).count() != ends.len() {
            return Err(Error::Decode("terminal entries and episode ends disagree".into()));
        }
        let evicted_end = match r.u8()? {
            0 => None,
            1 => {
                let e = r.u64()?;
                if e >= store.oldest_seq() || ends.front().is_some_and(|&f| e >= f) {
                    return Err(Error::Decode("evicted end is still resident".into()));
                }
                Some(e)
            }
            other => return Err(Error::Decode(format!("bad flag {other}"))),
        };
        r.finish()?;
        Ok(ContextBuffer {
            state_dim,
            action_dim,
            store,
            ends,
            evicted_end,
        })
    }
}

fn snapshot_width(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(0usize, |acc, &p| acc.checked_add(p))
        .filter(|&w| w > 0 && w < (1 << 20))
        .ok_or_else(|| Error::Decode("implausible row width".into()))
}

/// `n` contiguous within-episode segments of length `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    n: usize,
    l: usize,
    state_dim: usize,
    action_dim: usize,
    /// Segment-major: segment `i` occupies `[i * l, (i + 1) * l)`.
    transitions: Vec<Transition>,
    /// Sequence number of each segment's first transition.
    starts: Vec<u64>,
}

impl SegmentBatch {
    /// Builds a batch from explicit segments (all of equal length).
    pub fn from_segments(segments: Vec<Vec<Transition>>) -> Result<Self> {
        let n = segments.len();
        let l = segments.first().map_or(0, Vec::len);
        if n == 0 || l == 0 {
            return Err(Error::contract("segment batch must be non-empty"));
        }
        let state_dim = segments[0][0].s.len();
        let action_dim = segments[0][0].a.len();
        let mut transitions = Vec::with_capacity(n * l);
        for seg in segments {
            if seg.len() != l {
                return Err(Error::dim("segment_batch", &[l], &[seg.len()]));
            }
            for t in seg {
                check_width("segment_batch.s", t.s.len(), state_dim)?;
                check_width("segment_batch.a", t.a.len(), action_dim)?;
                transitions.push(t);
            }
        }
        Ok(SegmentBatch {
            n,
            l,
            state_dim,
            action_dim,
            transitions,
            starts: (0..n as u64).map(|i| i * l as u64).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn segment(&self, i: usize) -> &[Transition] {
        &self.transitions[i * self.l..(i + 1) * self.l]
    }

    pub fn segments(&self) -> impl Iterator<Item = &[Transition]> {
        self.transitions.chunks(self.l)
    }

    /// Source sequence numbers of segment `i`.
    pub fn source(&self, i: usize) -> std::ops::Range<u64> {
        self.starts[i]..self.starts[i] + self.l as u64
    }

    /// Row `i` is `f` applied to step `t` of segment `i`.
    pub fn step_rows(&self, t: usize, f: impl Fn(&Transition) -> Vec<f64>) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = (0..self.n).map(|i| f(&self.segment(i)[t])).collect();
        Tensor::from_rows(&rows)
    }
}

/// Ring of context-augmented tuples (`D_rl`).
#[derive(Debug, Clone, PartialEq)]
pub struct RlBuffer {
    context_dim: usize,
    state_dim: usize,
    action_dim: usize,
    store: RowStore,
}

impl RlBuffer {
    pub fn new(context_dim: usize, state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        RlBuffer {
            context_dim,
            state_dim,
            action_dim,
            store: RowStore::new(2 * context_dim + 2 * state_dim + action_dim + 1, capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.store.capacity
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn pushed(&self) -> u64 {
        self.store.pushed
    }

    /// Slot the next push will write.
    pub fn cursor(&self) -> usize {
        self.store.slot(self.store.pushed)
    }

    pub fn push(&mut self, t: &RlTuple) -> Result<()> {
        check_width("push_rl_tuple.c", t.c.len(), self.context_dim)?;
        check_width("push_rl_tuple.s", t.s.len(), self.state_dim)?;
        check_width("push_rl_tuple.a", t.a.len(), self.action_dim)?;
        check_width("push_rl_tuple.s_next", t.s_next.len(), self.state_dim)?;
        check_width("push_rl_tuple.c_next", t.c_next.len(), self.context_dim)?;
        let mut row = Vec::with_capacity(self.store.width);
        row.extend_from_slice(&t.c);
        row.extend_from_slice(&t.s);
        row.extend_from_slice(&t.a);
        row.push(t.r);
        row.extend_from_slice(&t.s_next);
        row.extend_from_slice(&t.c_next);
        self.store.push(&row, t.done);
        Ok(())
    }

    pub fn get(&self, slot: usize) -> Option<RlTuple> {
        (slot < self.len()).then(|| self.decode_row(slot))
    }

    fn decode_row(&self, slot: usize) -> RlTuple {
        let (cd, sd, ad) = (self.context_dim, self.state_dim, self.action_dim);
        let row = self.store.row(slot);
        let mut at = 0;
        let mut take = |n: usize| {
            let v = row[at..at + n].to_vec();
            at += n;
            v
        };
        let c = take(cd);
        let s = take(sd);
        let a = take(ad);
        let r = take(1)[0];
        let s_next = take(sd);
        let c_next = take(cd);
        RlTuple {
            c,
            s,
            a,
            r,
            s_next,
            c_next,
            done: self.store.done[slot],
        }
    }

    /// Ring slots of `n` uniform draws with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(Error::InsufficientData("rl buffer is empty".into()));
        }
        let len = self.len();
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<RlBatch> {
        let idx = self.sample_indices(n, rng)?;
        let tuples: Vec<RlTuple> = idx.iter().map(|&i| self.decode_row(i)).collect();
        let mut batch = RlBatch::from_tuples(&tuples)?;
        batch.indices = idx;
        Ok(batch)
    }

    pub fn encode_snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(BUFFER_MAGIC);
        w.u32(crate::codec::FORMAT_VERSION);
        w.u8(KIND_RL);
        w.u64(self.context_dim as u64);
        w.u64(self.state_dim as u64);
        w.u64(self.action_dim as u64);
        self.store.encode(&mut w);
        w.finish()
    }

    pub fn decode_snapshot(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(BUFFER_MAGIC)?;
        if r.u8()? != KIND_RL {
            return Err(Error::Decode("not an rl-buffer snapshot".into()));
        }
        let context_dim = r.usize()?;
        let state_dim = r.usize()?;
        let action_dim = r.usize()?;
        let width = snapshot_width(&[context_dim, context_dim, state_dim, state_dim, action_dim, 1])?;
        let store = RowStore::decode(&mut r, width)?;
        r.finish()?;
        Ok(RlBuffer {
            context_dim,
            state_dim,
            action_dim,
            store,
        })
    }
}

/// A minibatch of [`RlTuple`]s laid out as row-stacked tensors.
///
/// Context tensors are absent when the context dimension is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RlBatch {
    pub c: Option<Tensor>,
    pub s: Tensor,
    pub a: Tensor,
    pub r: Vec<f64>,
    pub s_next: Tensor,
    pub c_next: Option<Tensor>,
    pub done: Vec<bool>,
    /// Ring slots the rows came from (empty for hand-built batches).
    pub indices: Vec<usize>,
}

impl RlBatch {
    pub fn from_tuples(tuples: &[RlTuple]) -> Result<Self> {
        if tuples.is_empty() {
            return Err(Error::InsufficientData("empty rl batch".into()));
        }
        let stack = |f: &dyn Fn(&RlTuple) -> Vec<f64>| -> Result<Tensor> {
            Tensor::from_rows(&tuples.iter().map(f).collect::<Vec<_>>())
        };
        let has_context = !tuples[0].c.is_empty();
        Ok(RlBatch {
            c: if has_context { Some(stack(&|t| t.c.clone())?) } else { None },
            s: stack(&|t| t.s.clone())?,
            a: stack(&|t| t.a.clone())?,
            r: tuples.iter().map(|t| t.r).collect(),
            s_next: stack(&|t| t.s_next.clone())?,
            c_next: if has_context {
                Some(stack(&|t| t.c_next.clone())?)
            } else {
                None
            },
            done: tuples.iter().map(|t| t.done).collect(),
            indices: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn tuple(&self, i: usize) -> RlTuple {
        let row = |t: &Option<Tensor>| t.as_ref().map_or_else(Vec::new, |t| t.row_slice(i).to_vec());
        RlTuple {
            c: row(&self.c),
            s: self.s.row_slice(i).to_vec(),
            a: self.a.row_slice(i).to_vec(),
            r: self.r[i],
            s_next: self.s_next.row_slice(i).to_vec(),
            c_next: row(&self.c_next),
            done: self.done[i],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(x: f64, done: bool) -> Transition {
        Transition {
            s: vec![x],
            a: vec![-x],
            r: x * 0.5,
            s_next: vec![x + 1.0],
            done,
        }
    }

    fn rl(x: f64, done: bool) -> RlTuple {
        RlTuple {
            c: vec![x, x + 0.1],
            s: vec![x],
            a: vec![-x],
            r: x,
            s_next: vec![x + 1.0],
            c_next: vec![x + 0.2, x + 0.3],
            done,
        }
    }

    #[test]
    fn episode_end_recorded() {
        let mut b = ContextBuffer::new(1, 1, 100);
        for i in 0..5 {
            b.push(&tr(i as f64, i == 4)).unwrap();
        }
        assert_eq!(b.episode_ends(), vec![4]);
    }

    #[test]
    fn fifo_overwrite() {
        let mut b = ContextBuffer::new(1, 1, 4);
        for i in 0..5 {
            b.push(&tr(i as f64, false)).unwrap();
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.get(0).unwrap().s, vec![4.0]);
        assert_eq!(b.get(1).unwrap().s, vec![1.0]);
        assert_eq!(b.cursor(), 1);
    }

    #[test]
    fn overwritten_end_is_pruned() {
        let mut b = ContextBuffer::new(1, 1, 4);
        b.push(&tr(0.0, false)).unwrap();
        b.push(&tr(1.0, true)).unwrap();
        b.push(&tr(2.0, false)).unwrap();
        b.push(&tr(3.0, true)).unwrap();
        assert_eq!(b.episode_ends(), vec![1, 3]);
        b.push(&tr(4.0, false)).unwrap();
        b.push(&tr(5.0, false)).unwrap();
        assert_eq!(b.episode_ends(), vec![3]);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut b = ContextBuffer::new(2, 1, 4);
        assert!(matches!(b.push(&tr(0.0, false)), Err(Error::Dimension { .. })));
        let mut r = RlBuffer::new(2, 1, 1, 4);
        let mut bad = rl(0.0, false);
        bad.c_next.pop();
        assert!(r.push(&bad).is_err());
    }

    #[test]
    fn unique_window_is_always_drawn() {
        let mut b = ContextBuffer::new(1, 1, 100);
        for i in 0..5 {
            b.push(&tr(i as f64, i == 4)).unwrap();
        }
        let batch = b.sample_segments(8, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for i in 0..8 {
            assert_eq!(batch.source(i), 0..5);
            assert_eq!(batch.segment(i)[4].s, vec![4.0]);
        }
    }

    #[test]
    fn short_episodes_are_insufficient() {
        let mut b = ContextBuffer::new(1, 1, 100);
        for ep in 0..3 {
            for i in 0..4 {
                b.push(&tr((ep * 10 + i) as f64, i == 3)).unwrap();
            }
        }
        let err = b.sample_segments(2, 5, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::InsufficientData(_))));
        assert_eq!(b.window_count(4), 3);
    }

    #[test]
    fn in_progress_and_truncated_episodes_are_excluded() {
        let mut b = ContextBuffer::new(1, 1, 6);
        // episode A: seq 0..=3, episode B: seq 4..=6, then 2 in-progress
        for i in 0..4 {
            b.push(&tr(i as f64, i == 3)).unwrap();
        }
        for i in 4..7 {
            b.push(&tr(i as f64, i == 6)).unwrap();
        }
        b.push(&tr(7.0, false)).unwrap();
        b.push(&tr(8.0, false)).unwrap();
        // resident seq 3..=8: A truncated, B complete, tail in progress
        assert_eq!(b.episodes(), vec![EpisodeSpan { start: 4, end: 6 }]);
        assert_eq!(b.window_count(2), 2);
    }

    #[test]
    fn rl_round_trip_and_single_entry_sampling() {
        let mut b = RlBuffer::new(2, 1, 1, 3);
        b.push(&rl(1.0, true)).unwrap();
        let batch = b.sample(5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for i in 0..5 {
            assert_eq!(batch.tuple(i), rl(1.0, true));
        }
        for i in 2..6 {
            b.push(&rl(i as f64, false)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let resident: Vec<f64> = (0..3).map(|s| b.get(s).unwrap().r).collect();
        assert_eq!(resident, vec![4.0, 5.0, 3.0]);
    }

    #[test]
    fn empty_rl_buffer_is_insufficient() {
        let b = RlBuffer::new(0, 1, 1, 3);
        assert!(matches!(
            b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = RlBuffer::new(0, 1, 1, 50);
        for i in 0..50 {
            b.push(&rl(i as f64, false).tap_zero_context()).unwrap();
        }
        let a = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = b.sample_indices(32, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn snapshots_round_trip() {
        let mut cb = ContextBuffer::new(1, 1, 5);
        for i in 0..13 {
            cb.push(&tr(i as f64, i % 3 == 2)).unwrap();
        }
        let back = ContextBuffer::decode_snapshot(&cb.encode_snapshot()).unwrap();
        assert_eq!(back, cb);

        let mut rb = RlBuffer::new(2, 1, 1, 4);
        for i in 0..6 {
            rb.push(&rl(i as f64, i == 5)).unwrap();
        }
        let back = RlBuffer::decode_snapshot(&rb.encode_snapshot()).unwrap();
        assert_eq!(back, rb);
        assert!(ContextBuffer::decode_snapshot(&rb.encode_snapshot()).is_err());
    }

    impl RlTuple {
        fn tap_zero_context(mut self) -> Self {
            self.c.clear();
            self.c_next.clear();
            self
        }
    }
}
