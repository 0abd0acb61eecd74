//! Little-endian byte writer and strict reader for command and message payloads.

use alloc::format;
use alloc::vec::Vec;
use num_bigint::BigUint;

use crate::bits;
use crate::error::{Error, Result};
use crate::ring::Ring;

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Writer { buf: Vec::with_capacity(n) }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    /// `u32` length prefix followed by the bytes.
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32).raw(b)
    }

    pub fn big(&mut self, v: &BigUint) -> &mut Self {
        self.bytes(&v.to_bytes_be())
    }

    /// `u32` count followed by `count` ring elements.
    pub fn elems(&mut self, ring: Ring, vs: &[u64]) -> &mut Self {
        self.u32(vs.len() as u32);
        ring.write_elems(vs, &mut self.buf);
        self
    }

    /// `u32` count followed by packed bits.
    pub fn bits(&mut self, bs: &[u8]) -> &mut Self {
        self.u32(bs.len() as u32).raw(&bits::pack(bs))
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Frame(format!(
                "need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn big(&mut self) -> Result<BigUint> {
        Ok(BigUint::from_bytes_be(self.bytes()?))
    }

    pub fn elems(&mut self, ring: Ring) -> Result<Vec<u64>> {
        let n = self.u32()? as usize;
        let w = ring.byte_len();
        let raw = self.take(n.checked_mul(w).ok_or_else(|| Error::Frame("length overflow".into()))?)?;
        ring.decode_elems(raw)
    }

    pub fn bits(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        bits::unpack(self.take(bits::packed_len(n))?, n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Fails unless every byte was consumed.
    pub fn end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Frame(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let r = Ring::DEFAULT;
        let mut w = Writer::new();
        w.u8(3).u32(7).u64(9).u128(11).bytes(b"hi").big(&BigUint::from(258u32));
        w.elems(r, &[1, 2, 3]).bits(&[1, 0, 1]);
        let buf = w.finish();
        let mut rd = Reader::new(&buf);
        assert_eq!(rd.u8().unwrap(), 3);
        assert_eq!(rd.u32().unwrap(), 7);
        assert_eq!(rd.u64().unwrap(), 9);
        assert_eq!(rd.u128().unwrap(), 11);
        assert_eq!(rd.bytes().unwrap(), b"hi");
        assert_eq!(rd.big().unwrap(), BigUint::from(258u32));
        assert_eq!(rd.elems(r).unwrap(), alloc::vec![1, 2, 3]);
        assert_eq!(rd.bits().unwrap(), alloc::vec![1, 0, 1]);
        rd.end().unwrap();
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut w = Writer::new();
        w.elems(Ring::DEFAULT, &[1, 2]);
        let buf = w.finish();
        assert!(Reader::new(&buf[..buf.len() - 1]).elems(Ring::DEFAULT).is_err());
        let mut rd = Reader::new(&buf);
        rd.u8().unwrap();
        assert!(rd.end().is_err());
    }
}
