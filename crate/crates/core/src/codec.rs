//! Little-endian binary helpers shared by the file containers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bounds-checked cursor that reports the byte offset of any shortfall.
pub struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Self { what, bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                what: self.what,
                offset: self.pos,
                msg: format!("need {n} bytes for {field}, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = match self.take(4, "magic") {
            Ok(m) => m,
            Err(_) => &self.bytes[self.pos..],
        };
        if found != expected {
            return Err(Error::BadMagic {
                what: self.what,
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    pub fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * n, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    }

    pub fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>> {
        let raw = self.take(8 * n, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn offset(&self) -> usize {
        self.pos
    }
}

/// Append-only little-endian encoder.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
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

    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }

    pub fn f64s(&mut self, values: &[f64]) {
        for &v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// `u32 len | utf-8 bytes`.
    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// `u32 rank | rank × u32 dims | f64 values`.
    pub fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.f64s(t.data());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

impl<'a> Reader<'a> {
    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u128(&mut self, field: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, field)?.try_into().expect("16 bytes")))
    }

    pub fn string(&mut self, field: &str) -> Result<String> {
        let len = self.u32(field)? as usize;
        let at = self.offset();
        let raw = self.take(len, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Corrupted {
            what: self.what,
            msg: format!("{field} at offset {at} is not valid UTF-8"),
        })
    }

    pub fn tensor(&mut self, field: &str) -> Result<Tensor> {
        let rank = self.u32(field)? as usize;
        if rank > 8 {
            return Err(Error::Corrupted {
                what: self.what,
                msg: format!("{field} claims rank {rank} at offset {}", self.offset()),
            });
        }
        let shape = (0..rank).map(|_| self.u32(field).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().fold(1usize, |a, &d| a.saturating_mul(d));
        if numel.saturating_mul(8) > self.remaining() {
            return Err(Error::Truncated {
                what: self.what,
                offset: self.offset(),
                msg: format!("{field} of shape {shape:?} exceeds the {} bytes left", self.remaining()),
            });
        }
        let data = self.f64s(numel, field)?;
        Tensor::new(shape, data).map_err(|e| Error::Corrupted {
            what: self.what,
            msg: format!("{field}: {e}"),
        })
    }

    /// Errors unless every byte has been consumed.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupted {
                what: self.what,
                msg: format!("{} trailing bytes at offset {}", self.remaining(), self.offset()),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = Writer::new();
        w.u8(7);
        w.u32(1);
        w.u64(u64::MAX);
        w.u128(1 << 100);
        w.string("héllo");
        let t = Tensor::new([2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -2.0]).unwrap();
        w.tensor(&t);
        let bytes = w.into_bytes();
        let mut r = Reader::new("TEST", &bytes);
        assert_eq!(r.u8("a").unwrap(), 7);
        assert_eq!(r.u32("b").unwrap(), 1);
        assert_eq!(r.u64("c").unwrap(), u64::MAX);
        assert_eq!(r.u128("d").unwrap(), 1 << 100);
        assert_eq!(r.string("e").unwrap(), "héllo");
        assert!(r.tensor("f").unwrap().bit_eq(&t));
        r.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let mut w = Writer::new();
        w.u32(3);
        let bytes = w.into_bytes();
        let mut r = Reader::new("TEST", &bytes[..3]);
        match r.u32("count") {
            Err(Error::Truncated { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn huge_tensor_claim_is_rejected_without_allocating() {
        let mut w = Writer::new();
        w.u32(2);
        w.u32(u32::MAX);
        w.u32(u32::MAX);
        let bytes = w.into_bytes();
        assert!(matches!(Reader::new("TEST", &bytes).tensor("t"), Err(Error::Truncated { .. })));
    }
}
