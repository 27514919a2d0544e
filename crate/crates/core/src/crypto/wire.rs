//! Length-prefixed big-endian encoding used for keys, ciphertexts and
//! protocol payloads.
//!
//! Every variable-length field is a `u32` big-endian length followed by the
//! bytes; big integers are their minimal big-endian magnitude.

use alloc::string::String;
use alloc::vec::Vec;

use num_bigint::BigUint;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("invalid utf-8 in string field")]
    Utf8,
    #[error("{0} trailing bytes after message")]
    Trailing(usize),
    #[error("malformed field: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i32(&mut self, v: i32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_bits().to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn biguint(&mut self, v: &BigUint) -> &mut Self {
        let bytes = if v.bits() == 0 { Vec::new() } else { v.to_bytes_be() };
        self.bytes(&bytes)
    }

    pub fn f64_slice(&mut self, v: &[f64]) -> &mut Self {
        self.u32(v.len() as u32);
        for &x in v {
            self.f64(x);
        }
        self
    }

    pub fn u64_slice(&mut self, v: &[u64]) -> &mut Self {
        self.u32(v.len() as u32);
        for &x in v {
            self.u64(x);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated { needed: n - self.buf.len() });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, WireError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_be_bytes(a))
    }

    pub fn i32(&mut self) -> Result<i32, WireError> {
        Ok(self.u32()? as i32)
    }

    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String, WireError> {
        let b = self.bytes()?;
        core::str::from_utf8(b).map(String::from).map_err(|_| WireError::Utf8)
    }

    pub fn biguint(&mut self) -> Result<BigUint, WireError> {
        Ok(BigUint::from_bytes_be(self.bytes()?))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, WireError> {
        let len = self.u32()? as usize;
        if self.buf.len() < len.saturating_mul(8) {
            return Err(WireError::Truncated { needed: len * 8 - self.buf.len() });
        }
        (0..len).map(|_| self.f64()).collect()
    }

    pub fn u64_vec(&mut self) -> Result<Vec<u64>, WireError> {
        let len = self.u32()? as usize;
        if self.buf.len() < len.saturating_mul(8) {
            return Err(WireError::Truncated { needed: len * 8 - self.buf.len() });
        }
        (0..len).map(|_| self.u64()).collect()
    }

    pub fn remaining(&self) -> usize {
        self.buf.len()
    }

    pub fn finish(self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.buf.len()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_fields_roundtrip() {
        let big = BigUint::parse_bytes(b"123456789abcdef0123456789", 16).unwrap();
        let mut w = Writer::new();
        w.u8(7).u32(9).u64(u64::MAX).i32(-3).f64(-0.5).str("héllo").biguint(&big);
        w.biguint(&BigUint::from(0u32)).f64_slice(&[1.0, 2.5]).u64_slice(&[3, 4]);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 9);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.i32().unwrap(), -3);
        assert_eq!(r.f64().unwrap(), -0.5);
        assert_eq!(r.string().unwrap(), "héllo");
        assert_eq!(r.biguint().unwrap(), big);
        assert_eq!(r.biguint().unwrap(), BigUint::from(0u32));
        assert_eq!(r.f64_vec().unwrap(), [1.0, 2.5]);
        assert_eq!(r.u64_vec().unwrap(), [3, 4]);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_detected() {
        let mut w = Writer::new();
        w.bytes(&[1, 2, 3]);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes[..5]);
        assert!(matches!(r.bytes(), Err(WireError::Truncated { .. })));
        let mut r = Reader::new(&[0, 0, 0, 200]);
        assert!(r.f64_vec().is_err());
    }
}
