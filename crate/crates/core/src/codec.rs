//! Versioned little-endian binary encoding for checkpoints and buffer
//! snapshots.
//!
//! Checkpoint layout:
//!
//! ```text
//! magic    8 bytes  "LCSACPT\0"
//! version  u32
//! count    u32
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank, values f64 x numel }
//! ```

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LCSACPT\0";
pub const FORMAT_VERSION: u32 = 1;

const MAX_RANK: usize = 4;
const MAX_NAME: usize = 4096;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    pub fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        self.f64s(t.data());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Bounds-checked cursor over untrusted bytes.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Decode(format!(
                "truncated input: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Decode(format!("non-finite value at offset {}", self.pos - 8)));
        }
        Ok(v)
    }

    /// `n` finite values; the length is validated against the remaining
    /// input before allocating.
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Decode("length overflow".into()))?;
        if bytes > self.remaining() {
            return Err(Error::Decode(format!("truncated input: {n} values declared")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Decode("length overflow".into()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > MAX_NAME {
            return Err(Error::Decode(format!("name length {n} exceeds {MAX_NAME}")));
        }
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Decode("name is not utf-8".into()))
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Decode(format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = self.usize()?;
            if d == 0 {
                return Err(Error::Decode("zero extent".into()));
            }
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Decode("shape overflow".into()))?;
            shape.push(d);
        }
        let data = self.f64s(numel)?;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.take(magic.len())? != magic {
            return Err(Error::Decode("bad magic".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Decode(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Decode(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.str(name);
        w.tensor(t);
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let count = r.u32()?;
    let mut out = ParamSet::new();
    for _ in 0..count {
        let name = r.str()?;
        let t = r.tensor()?;
        if out.contains(&name) {
            return Err(Error::Decode(format!("duplicate parameter {name:?}")));
        }
        out.insert(name, t);
    }
    r.finish()?;
    Ok(out)
}
