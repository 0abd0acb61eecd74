//! Arithmetic in `Z_L`, `L = 2^l`, with a two's-complement fixed-point reading.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Ring descriptor: bit width `l` and fixed-point precision `fp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ring {
    bits: u32,
    frac: u32,
}

impl Default for Ring {
    fn default() -> Self {
        Ring::DEFAULT
    }
}

impl fmt::Display for Ring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z_2^{}/fp{}", self.bits, self.frac)
    }
}

impl Ring {
    pub const DEFAULT: Ring = Ring { bits: 32, frac: 13 };

    pub fn new(bits: u32, frac: u32) -> Result<Self> {
        if !(8..=64).contains(&bits) || frac + 1 >= bits {
            return Err(Error::RingParams { bits, frac });
        }
        Ok(Ring { bits, frac })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn frac(self) -> u32 {
        self.frac
    }

    /// `L - 1`.
    #[inline]
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// `L / 2`, the first value read as negative.
    #[inline]
    pub fn half(self) -> u64 {
        1u64 << (self.bits - 1)
    }

    /// Wire width of one element.
    pub fn byte_len(self) -> usize {
        self.bits.div_ceil(8) as usize
    }

    /// Largest magnitude of the real range, `L / 2^(fp+1)`.
    pub fn real_bound(self) -> f64 {
        libm::exp2((self.bits - 1 - self.frac) as f64)
    }

    /// One unit in the last place of the fixed-point grid.
    pub fn ulp(self) -> f64 {
        libm::exp2(-(self.frac as f64))
    }

    #[inline]
    pub fn reduce(self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        0u64.wrapping_sub(a) & self.mask()
    }

    /// Product through a 128-bit intermediate.
    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) as u64) & self.mask()
    }

    /// Signed reading: `[0, L/2)` maps to itself, `[L/2, L)` to `v - L`.
    #[inline]
    pub fn signed(self, v: u64) -> i64 {
        let v = self.reduce(v);
        if self.bits == 64 {
            v as i64
        } else if v >= self.half() {
            (v as i64) - (1i64 << self.bits)
        } else {
            v as i64
        }
    }

    #[inline]
    pub fn from_signed(self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// `floor(x * 2^fp)`, plus `L` when negative.
    pub fn encode(self, x: f64) -> Result<u64> {
        let bound = self.real_bound();
        if !(x >= -bound && x < bound) {
            return Err(Error::Range { value: x, bound });
        }
        let scaled = libm::floor(x * libm::exp2(self.frac as f64));
        Ok(self.from_signed(scaled as i64))
    }

    pub fn decode(self, v: u64) -> f64 {
        self.signed(v) as f64 * self.ulp()
    }

    /// Arithmetic right shift of the signed reading: floor division by `2^k`.
    #[inline]
    pub fn shr_signed(self, v: u64, k: u32) -> u64 {
        debug_assert!(k < self.bits);
        self.from_signed(self.signed(v) >> k)
    }

    /// Fixed-point truncation by `fp` bits.
    #[inline]
    pub fn truncate(self, v: u64) -> u64 {
        self.shr_signed(v, self.frac)
    }

    pub fn write_elem(self, v: u64, out: &mut Vec<u8>) {
        out.extend_from_slice(&v.to_le_bytes()[..self.byte_len()]);
    }

    pub fn write_elems(self, vs: &[u64], out: &mut Vec<u8>) {
        let w = self.byte_len();
        let start = out.len();
        out.resize(start + vs.len() * w, 0);
        let dst = &mut out[start..];
        // Fixed widths let the copies compile to plain stores.
        match w {
            4 => dst.chunks_exact_mut(4).zip(vs).for_each(|(d, &v)| d.copy_from_slice(&(v as u32).to_le_bytes())),
            8 => dst.chunks_exact_mut(8).zip(vs).for_each(|(d, &v)| d.copy_from_slice(&v.to_le_bytes())),
            _ => dst.chunks_exact_mut(w).zip(vs).for_each(|(d, &v)| d.copy_from_slice(&v.to_le_bytes()[..w])),
        }
    }

    pub fn encode_elems(self, vs: &[u64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(vs.len() * self.byte_len());
        self.write_elems(vs, &mut out);
        out
    }

    /// Parses exactly `bytes.len() / byte_len` elements, rejecting bits above `l`.
    pub fn decode_elems(self, bytes: &[u8]) -> Result<Vec<u64>> {
        let w = self.byte_len();
        if bytes.len() % w != 0 {
            return Err(Error::Frame(alloc::format!(
                "{} bytes is not a whole number of {w}-byte elements",
                bytes.len()
            )));
        }
        let chunks = bytes.chunks_exact(w);
        let out: Vec<u64> = match w {
            4 => chunks.map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64).collect(),
            8 => chunks.map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
            _ => chunks
                .map(|c| {
                    let mut buf = [0u8; 8];
                    buf[..w].copy_from_slice(c);
                    u64::from_le_bytes(buf)
                })
                .collect(),
        };
        if out.iter().fold(0, |acc, &v| acc | v) & !self.mask() != 0 {
            return Err(Error::Frame("ring element exceeds l bits".into()));
        }
        Ok(out)
    }

    fn check(self, other: Ring) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::RingMismatch(self, other))
        }
    }
}

/// A single value of `Z_L` tagged with its ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RingElement {
    value: u64,
    ring: Ring,
}

impl RingElement {
    pub fn new(value: u64, ring: Ring) -> Self {
        RingElement {
            value: ring.reduce(value),
            ring,
        }
    }

    pub fn encode(x: f64, ring: Ring) -> Result<Self> {
        Ok(RingElement {
            value: ring.encode(x)?,
            ring,
        })
    }

    pub fn value(self) -> u64 {
        self.value
    }

    pub fn ring(self) -> Ring {
        self.ring
    }

    pub fn decode(self) -> f64 {
        self.ring.decode(self.value)
    }

    pub fn signed(self) -> i64 {
        self.ring.signed(self.value)
    }

    pub fn add(self, o: Self) -> Result<Self> {
        self.ring.check(o.ring)?;
        Ok(Self::new(self.ring.add(self.value, o.value), self.ring))
    }

    pub fn sub(self, o: Self) -> Result<Self> {
        self.ring.check(o.ring)?;
        Ok(Self::new(self.ring.sub(self.value, o.value), self.ring))
    }

    pub fn mul(self, o: Self) -> Result<Self> {
        self.ring.check(o.ring)?;
        Ok(Self::new(self.ring.mul(self.value, o.value), self.ring))
    }

    pub fn shr_signed(self, k: u32) -> Self {
        Self::new(self.ring.shr_signed(self.value, k), self.ring)
    }
}

/// A vector of ring values sharing one descriptor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingVector {
    ring: Ring,
    data: Vec<u64>,
}

impl RingVector {
    pub fn new(ring: Ring, mut data: Vec<u64>) -> Self {
        for v in &mut data {
            *v = ring.reduce(*v);
        }
        RingVector { ring, data }
    }

    pub fn zeros(ring: Ring, n: usize) -> Self {
        RingVector {
            ring,
            data: alloc::vec![0; n],
        }
    }

    pub fn encode(ring: Ring, xs: &[f64]) -> Result<Self> {
        let data = xs.iter().map(|&x| ring.encode(x)).collect::<Result<_>>()?;
        Ok(RingVector { ring, data })
    }

    pub fn decode(&self) -> Vec<f64> {
        self.data.iter().map(|&v| self.ring.decode(v)).collect()
    }

    pub fn ring(&self) -> Ring {
        self.ring
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u64> {
        self.data
    }

    pub fn get(&self, i: usize) -> Option<RingElement> {
        self.data.get(i).map(|&v| RingElement { value: v, ring: self.ring })
    }

    fn zip(&self, o: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        self.ring.check(o.ring)?;
        if self.len() != o.len() {
            return Err(Error::dim(alloc::format!("{} vs {}", self.len(), o.len())));
        }
        Ok(RingVector {
            ring: self.ring,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        let r = self.ring;
        self.zip(o, |a, b| r.add(a, b))
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        let r = self.ring;
        self.zip(o, |a, b| r.sub(a, b))
    }

    pub fn mul(&self, o: &Self) -> Result<Self> {
        let r = self.ring;
        self.zip(o, |a, b| r.mul(a, b))
    }

    pub fn shr_signed(&self, k: u32) -> Self {
        RingVector {
            ring: self.ring,
            data: self.data.iter().map(|&v| self.ring.shr_signed(v, k)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.ring.encode_elems(&self.data)
    }

    pub fn from_bytes(ring: Ring, bytes: &[u8]) -> Result<Self> {
        Ok(RingVector {
            ring,
            data: ring.decode_elems(bytes)?,
        })
    }
}

/// Elementwise helpers over raw slices, used on hot paths.
pub fn add_into(ring: Ring, acc: &mut [u64], xs: &[u64]) {
    for (a, &x) in acc.iter_mut().zip(xs) {
        *a = ring.add(*a, x);
    }
}

pub fn sub_into(ring: Ring, acc: &mut [u64], xs: &[u64]) {
    for (a, &x) in acc.iter_mut().zip(xs) {
        *a = ring.sub(*a, x);
    }
}

pub fn add_vec(ring: Ring, a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(&x, &y)| ring.add(x, y)).collect()
}

pub fn sub_vec(ring: Ring, a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(&x, &y)| ring.sub(x, y)).collect()
}

/// Row-major `a x b` times `b x c`, reduced mod `L`.
pub fn matmul(ring: Ring, x: &[u64], y: &[u64], a: usize, b: usize, c: usize) -> Vec<u64> {
    let mut out = alloc::vec![0u64; a * c];
    matmul_acc(ring, &mut out, x, y, a, b, c);
    out
}

/// `out += x * y` with wrapping 64-bit accumulation, reduced at the end.
pub fn matmul_acc(ring: Ring, out: &mut [u64], x: &[u64], y: &[u64], a: usize, b: usize, c: usize) {
    debug_assert_eq!(x.len(), a * b);
    debug_assert_eq!(y.len(), b * c);
    debug_assert_eq!(out.len(), a * c);
    for i in 0..a {
        let row = &mut out[i * c..(i + 1) * c];
        for k in 0..b {
            let xv = x[i * b + k];
            if xv == 0 {
                continue;
            }
            let yrow = &y[k * c..(k + 1) * c];
            for (o, &yv) in row.iter_mut().zip(yrow) {
                *o = o.wrapping_add(xv.wrapping_mul(yv));
            }
        }
    }
    for o in out.iter_mut() {
        *o = ring.reduce(*o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const R: Ring = Ring::DEFAULT;

    #[test]
    fn encode_examples() {
        assert_eq!(R.encode(1.0).unwrap(), 8192);
        assert_eq!(R.encode(-1.0).unwrap(), (1u64 << 32) - 8192);
        assert_eq!(R.encode(262144.0 - 1.0 / 8192.0).unwrap(), (1u64 << 31) - 1);
        assert_eq!(R.encode(-262144.0).unwrap(), 1u64 << 31);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let err = R.encode(262144.0).unwrap_err();
        assert!(matches!(err, Error::Range { bound, .. } if bound == 262144.0));
        assert!(R.encode(-262144.0001).is_err());
        assert!(R.encode(f64::NAN).is_err());
        assert!(R.encode(f64::INFINITY).is_err());
    }

    #[test]
    fn encode_floors_negative_values() {
        // -0.5 ulp floors to -1 ulp
        assert_eq!(R.signed(R.encode(-0.5 / 8192.0).unwrap()), -1);
        assert_eq!(R.signed(R.encode(0.5 / 8192.0).unwrap()), 0);
    }

    #[test]
    fn decode_examples() {
        assert_eq!(R.decode(8192), 1.0);
        assert_eq!(R.decode(0), 0.0);
        assert_eq!(R.decode((1u64 << 32) - 8192), -1.0);
    }

    #[test]
    fn arithmetic_examples() {
        let l = 1u64 << 32;
        assert_eq!(R.add(l - 1, 1), 0);
        assert_eq!(R.sub(0, 1), l - 1);
        assert_eq!(R.mul(24576, 40960), (15u64 << 26) % l);
    }

    #[test]
    fn shift_examples() {
        let l = 1u64 << 32;
        assert_eq!(R.shr_signed(15 << 26, 13), 122880);
        assert_eq!(R.shr_signed(l - 8192, 13), l - 1);
        assert_eq!(R.shr_signed(0, 5), 0);
    }

    #[test]
    fn shift_matches_floor_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let v = rng.next_u64() & R.mask();
            let k = (rng.next_u32() % 32) as u32;
            let s = R.signed(v) as i128;
            let expect = s.div_euclid(1i128 << k);
            assert_eq!(R.signed(R.shr_signed(v, k)) as i128, expect, "v={v} k={k}");
        }
    }

    #[test]
    fn element_ops_check_ring() {
        let a = RingElement::new(5, R);
        let b = RingElement::new(5, Ring::new(64, 16).unwrap());
        assert!(matches!(a.add(b), Err(Error::RingMismatch(..))));
        assert_eq!(a.mul(RingElement::new(3, R)).unwrap().value(), 15);
    }

    #[test]
    fn ring_params_validated() {
        assert!(Ring::new(32, 31).is_err());
        assert!(Ring::new(65, 13).is_err());
        assert!(Ring::new(64, 20).is_ok());
    }

    #[test]
    fn wire_roundtrip_and_width() {
        let v = RingVector::new(R, alloc::vec![1, 2, u32::MAX as u64]);
        let bytes = v.to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(RingVector::from_bytes(R, &bytes).unwrap(), v);
        assert!(RingVector::from_bytes(R, &bytes[..11]).is_err());
        let r20 = Ring::new(20, 8).unwrap();
        assert_eq!(r20.byte_len(), 3);
        assert!(r20.decode_elems(&[0xff, 0xff, 0xff]).is_err());
    }

    #[test]
    fn matmul_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c) = (3, 5, 4);
        let x: Vec<u64> = (0..a * b).map(|_| rng.next_u64() & R.mask()).collect();
        let y: Vec<u64> = (0..b * c).map(|_| rng.next_u64() & R.mask()).collect();
        let got = matmul(R, &x, &y, a, b, c);
        for i in 0..a {
            for j in 0..c {
                let mut acc = 0u128;
                for k in 0..b {
                    acc += x[i * b + k] as u128 * y[k * c + j] as u128;
                }
                assert_eq!(got[i * c + j], (acc % (1u128 << 32)) as u64);
            }
        }
    }

    proptest! {
        #[test]
        fn grid_roundtrip(k in -(1i64 << 31)..(1i64 << 31)) {
            let x = k as f64 / 8192.0;
            prop_assert_eq!(R.decode(R.encode(x).unwrap()), x);
        }

        #[test]
        fn signed_partition(v in 0u64..(1u64 << 32)) {
            let s = R.signed(v);
            let lifted = s as i128 + if v >= R.half() { 1i128 << 32 } else { 0 };
            prop_assert_eq!(lifted, v as i128);
            prop_assert_eq!(R.from_signed(s), v);
        }

        #[test]
        fn ring_laws(a in 0u64..(1u64 << 32), b in 0u64..(1u64 << 32)) {
            prop_assert_eq!(R.sub(R.add(a, b), b), a);
            prop_assert_eq!(R.add(a, R.neg(a)), 0);
            prop_assert_eq!(R.mul(a, b), ((a as u128 * b as u128) % (1u128 << 32)) as u64);
        }
    }
}
