//! Exponentials of ring values far outside the `f64` range.
//!
//! A positive real is carried as `2^q * (m / 2^52)` with `m` in
//! `[2^51, 2^52)`, so the mantissa part lies in `[0.5, 1)`. The base-2
//! logarithm of `exp(u / 2^fp)` is evaluated in double-double arithmetic so
//! that the split is exact to within one unit of the 52-bit mantissa.

use crate::error::{Error, Result};
use crate::ring::Ring;

pub const MANT_BITS: u32 = 52;
pub const MANT_MIN: u64 = 1 << (MANT_BITS - 1);
pub const MANT_MAX: u64 = (1 << MANT_BITS) - 1;
pub const MANT_MASK: u64 = (1 << MANT_BITS) - 1;

const LOG2E_HI: f64 = core::f64::consts::LOG2_E;
const LOG2E_LO: f64 = 2.035_527_374_093_103_3e-17;
const E_HI: f64 = core::f64::consts::E;
const E_LO: f64 = 1.445_646_891_729_250_2e-16;

/// `2^q * (m / 2^52)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpParts {
    pub q: i64,
    pub m: u64,
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, libm::fma(a, b, -p))
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Split of `exp(u / 2^frac)` for a non-negative integer `u < 2^53`.
pub fn split_exp(u: u64, frac: u32) -> ExpParts {
    debug_assert!(u < 1 << 53);
    let x = u as f64;
    let (p, e) = two_prod(x, LOG2E_HI);
    let lo = e + x * LOG2E_LO;
    let scale = libm::exp2(-(frac as f64));
    let (hi, lo) = (p * scale, lo * scale);
    let mut whole = libm::floor(hi);
    let mut f = (hi - whole) + lo;
    if f < 0.0 {
        whole -= 1.0;
        f += 1.0;
    } else if f >= 1.0 {
        whole += 1.0;
        f -= 1.0;
    }
    let mant = libm::exp2(f - 1.0);
    let m = (libm::floor(mant * (1u64 << MANT_BITS) as f64) as u64).clamp(MANT_MIN, MANT_MAX);
    ExpParts {
        q: whole as i64 + 1,
        m,
    }
}

/// A positive real `mant * 2^exp` with `mant` in `[0.5, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaled {
    pub mant: f64,
    pub exp: i64,
}

impl Scaled {
    pub fn from_parts(p: ExpParts) -> Self {
        Scaled {
            mant: p.m as f64 / (1u64 << MANT_BITS) as f64,
            exp: p.q,
        }
        .normalized()
    }

    pub fn normalized(mut self) -> Self {
        if self.mant <= 0.0 || !self.mant.is_finite() {
            return self;
        }
        let (m, e) = libm::frexp(self.mant);
        self.mant = m;
        self.exp += e as i64;
        self
    }

    pub fn mul(self, o: Scaled) -> Self {
        Scaled {
            mant: self.mant * o.mant,
            exp: self.exp + o.exp,
        }
        .normalized()
    }

    pub fn div(self, o: Scaled) -> Self {
        Scaled {
            mant: self.mant / o.mant,
            exp: self.exp - o.exp,
        }
        .normalized()
    }

    /// Strict order on normalised values.
    pub fn gt(self, o: Scaled) -> bool {
        self.exp > o.exp || (self.exp == o.exp && self.mant > o.mant)
    }

    /// `mant * 2^(exp - shift)` as an `f64`, flushing to zero on underflow.
    pub fn to_f64_shifted(self, shift: i64) -> f64 {
        let d = self.exp - shift;
        if d < -1100 {
            0.0
        } else {
            libm::scalbn(self.mant, d.min(1100) as i32)
        }
    }
}

/// Constants the trusted component stores for exponent reconstruction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxConsts {
    /// `2^q_l * (m_l / 2^52) = exp(L / 2^fp)`.
    pub q_l: i64,
    pub m_l: u64,
    /// `(L/2 / 2^fp) * log2(e)`.
    pub qb: f64,
    frac: u32,
    bits: u32,
}

impl SoftmaxConsts {
    /// Fails when exponents would not fit the 32-bit exponent slot or the
    /// share sums would not be exact in `f64`.
    pub fn for_ring(ring: Ring) -> Result<Self> {
        let span = ring.bits() - ring.frac();
        if ring.bits() > 50 || span > 28 {
            return Err(Error::Config(alloc::format!("softmax unsupported for ring {ring}")));
        }
        let p = split_exp(1u64 << ring.bits(), ring.frac());
        Ok(SoftmaxConsts {
            q_l: p.q,
            m_l: p.m,
            qb: libm::exp2((span - 1) as f64) * LOG2E_HI,
            frac: ring.frac(),
            bits: ring.bits(),
        })
    }

    pub fn exp_l(&self) -> Scaled {
        Scaled::from_parts(ExpParts {
            q: self.q_l,
            m: self.m_l,
        })
    }

    /// Upper bound on the raw exponent sum of `factors` per-share exponentials.
    pub fn exponent_limit(&self, factors: u32) -> i64 {
        libm::ceil((2 * factors + 1) as f64 * self.qb) as i64
    }

    /// Threshold between wrap counts `k` and `k + 1`: the value of
    /// `exp(((2k + 1) L / 2 - 1/2) / 2^fp)`, midway between adjacent integers.
    pub fn wrap_threshold(&self, k: u32) -> Scaled {
        let u2 = (2 * k as u64 + 1) * (1u64 << self.bits) - 1;
        Scaled::from_parts(split_exp(u2, self.frac + 1))
    }

    /// Recomputes `exp(2^(l - fp))` by repeated squaring of `e` in
    /// double-double and checks the stored pair to within one mantissa unit.
    pub fn verify(&self) -> bool {
        let (mut hi, mut lo) = (E_HI, E_LO);
        let mut exp: i64 = 0;
        for _ in 0..(self.bits - self.frac) {
            let (p, e) = two_prod(hi, hi);
            let e = e + 2.0 * hi * lo;
            let (s, t) = two_sum(p, e);
            let (m, k) = libm::frexp(s);
            let scale = libm::scalbn(1.0, -k);
            hi = m;
            lo = t * scale;
            exp = 2 * exp + k as i64;
        }
        let want = (hi + lo) * (1u64 << MANT_BITS) as f64;
        exp == self.q_l && libm::fabs(want - self.m_l as f64) <= 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gives_half() {
        let p = split_exp(0, 13);
        assert_eq!(p, ExpParts { q: 1, m: MANT_MIN });
    }

    #[test]
    fn small_values_match_libm() {
        for u in [1u64, 100, 8192, 5 * 8192 + 17, 700 * 8192] {
            let p = split_exp(u, 13);
            let x = u as f64 / 8192.0;
            let got = p.m as f64 / (1u64 << 52) as f64 * libm::exp2(p.q as f64);
            let want = libm::exp(x);
            assert!(((got - want) / want).abs() < 1e-14, "u={u} got={got} want={want}");
        }
    }

    #[test]
    fn consts_for_default_ring() {
        let c = SoftmaxConsts::for_ring(Ring::DEFAULT).unwrap();
        assert_eq!(c.q_l, 756_388);
        let mant = c.m_l as f64 / (1u64 << 52) as f64;
        assert!((mant - 0.810_900_941_551_883_7).abs() < 1e-15);
        assert!((c.qb - 378_193.848_798_796_4).abs() < 1e-6);
        assert!(c.verify());
    }

    #[test]
    fn verify_rejects_perturbed_consts() {
        let mut c = SoftmaxConsts::for_ring(Ring::DEFAULT).unwrap();
        c.m_l += 3;
        assert!(!c.verify());
        let mut c = SoftmaxConsts::for_ring(Ring::DEFAULT).unwrap();
        c.q_l += 1;
        assert!(!c.verify());
    }

    #[test]
    fn wrap_thresholds_separate_neighbours() {
        let c = SoftmaxConsts::for_ring(Ring::DEFAULT).unwrap();
        let l = 1u64 << 32;
        for k in 0..3u32 {
            let th = c.wrap_threshold(k);
            let mid = (2 * k as u64 + 1) * l / 2;
            let below = Scaled::from_parts(split_exp(mid - 1, 13));
            let at = Scaled::from_parts(split_exp(mid, 13));
            assert!(th.gt(below), "k={k}");
            assert!(at.gt(th), "k={k}");
        }
    }

    #[test]
    fn split_is_monotone_near_half_range() {
        let mid = 1u64 << 31;
        let mut prev = Scaled::from_parts(split_exp(mid - 50, 13));
        for u in mid - 49..mid + 50 {
            let cur = Scaled::from_parts(split_exp(u, 13));
            assert!(cur.gt(prev));
            prev = cur;
        }
    }

    #[test]
    fn unsupported_ring() {
        assert!(SoftmaxConsts::for_ring(Ring::new(64, 16).unwrap()).is_err());
    }
}
