//! Little-endian byte helpers shared by the binary formats.

use crate::error::{Error, Result};

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32(buf: &mut Vec<u8>, v: f32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Cursor over a byte slice; every read reports truncation as `on_short`.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, on_short: impl FnOnce() -> Error) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(on_short());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, on_short: impl FnOnce() -> Error) -> Result<u32> {
        let b = self.take(4, on_short)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, on_short: impl FnOnce() -> Error) -> Result<u64> {
        let b = self.take(8, on_short)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f64(&mut self, on_short: impl FnOnce() -> Error) -> Result<f64> {
        let b = self.take(8, on_short)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, on_short: impl FnOnce() -> Error) -> Result<Vec<f32>> {
        let b = self.take(n * 4, on_short)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
