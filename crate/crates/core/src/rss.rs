//! 2-out-of-3 replicated secret sharing.
//!
//! A secret `x = s_0 + s_1 + s_2 (mod L)`; party `p` holds `(s_p, s_{p+1})`
//! as `Share { a, b }`.

use alloc::format;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::error::{Abort, Error, Result};
use crate::net::{malformed, next, prev, proto, Network, PartyId};
use crate::party::Party;
use crate::ring::{add_into, add_vec, matmul_acc, sub_vec, Ring};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Share {
    /// `s_p`
    pub a: Vec<u64>,
    /// `s_{p+1}`
    pub b: Vec<u64>,
}

/// Mod-2 companion of a [`Share`], one bit per byte.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitShare {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

impl Share {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn check(&self, o: &Share) -> Result<()> {
        if self.len() != o.len() || self.b.len() != self.a.len() || o.b.len() != o.a.len() {
            return Err(Error::dim(format!("shares of length {} and {}", self.len(), o.len())));
        }
        Ok(())
    }

    pub fn add(&self, ring: Ring, o: &Share) -> Result<Share> {
        self.check(o)?;
        Ok(Share { a: add_vec(ring, &self.a, &o.a), b: add_vec(ring, &self.b, &o.b) })
    }

    pub fn sub(&self, ring: Ring, o: &Share) -> Result<Share> {
        self.check(o)?;
        Ok(Share { a: sub_vec(ring, &self.a, &o.a), b: sub_vec(ring, &self.b, &o.b) })
    }

    pub fn neg(&self, ring: Ring) -> Share {
        Share { a: self.a.iter().map(|&v| ring.neg(v)).collect(), b: self.b.iter().map(|&v| ring.neg(v)).collect() }
    }

    /// Multiplication by a public ring constant.
    pub fn scale(&self, ring: Ring, c: u64) -> Share {
        Share { a: self.a.iter().map(|&v| ring.mul(v, c)).collect(), b: self.b.iter().map(|&v| ring.mul(v, c)).collect() }
    }

    /// Adds a public vector to component `s_0` only, held by parties 0 and 2.
    pub fn add_const(&self, ring: Ring, party: PartyId, c: &[u64]) -> Result<Share> {
        if c.len() != self.len() {
            return Err(Error::dim(format!("constant of length {} on share of {}", c.len(), self.len())));
        }
        let mut s = self.clone();
        match party {
            0 => add_into(ring, &mut s.a, c),
            2 => add_into(ring, &mut s.b, c),
            _ => {}
        }
        Ok(s)
    }

    /// Elements `range` of the shared vector.
    pub fn slice(&self, range: core::ops::Range<usize>) -> Share {
        Share { a: self.a[range.clone()].to_vec(), b: self.b[range].to_vec() }
    }

    pub fn extend(&mut self, o: &Share) {
        self.a.extend_from_slice(&o.a);
        self.b.extend_from_slice(&o.b);
    }

    /// Selects elements by index.
    pub fn gather(&self, idx: &[usize]) -> Share {
        Share { a: idx.iter().map(|&i| self.a[i]).collect(), b: idx.iter().map(|&i| self.b[i]).collect() }
    }
}

/// Test dealer: shares `x` directly, returning each party's view.
pub fn deal(ring: Ring, x: &[u64], rng: &mut impl RngCore) -> [Share; 3] {
    let s0: Vec<u64> = x.iter().map(|_| rng.next_u64() & ring.mask()).collect();
    let s1: Vec<u64> = x.iter().map(|_| rng.next_u64() & ring.mask()).collect();
    let s2: Vec<u64> = (0..x.len()).map(|i| ring.sub(ring.sub(x[i], s0[i]), s1[i])).collect();
    let s = [s0, s1, s2];
    [0, 1, 2].map(|p| Share { a: s[p].clone(), b: s[(p + 1) % 3].clone() })
}

/// Test reconstruction from all three views.
pub fn combine(ring: Ring, views: &[Share; 3]) -> Vec<u64> {
    (0..views[0].len())
        .map(|i| ring.add(ring.add(views[0].a[i], views[1].a[i]), views[2].a[i]))
        .collect()
}

/// Locally computable products of two replicated sharings: the standard
/// 3-out-of-3 decomposition and the rotated one used for checking.
fn products(
    x: &Share,
    y: &Share,
    rotated: bool,
    prod: &impl Fn(&[u64], &[u64], &mut [u64]),
    ring: Ring,
    out_len: usize,
) -> Vec<u64> {
    let mut c = alloc::vec![0u64; out_len];
    let ysum = add_vec(ring, &y.a, &y.b);
    if rotated {
        // A_{p+1}(B_p + B_{p+1}) + A_p B_{p+1}
        prod(&x.b, &ysum, &mut c);
        prod(&x.a, &y.b, &mut c);
    } else {
        // A_p(B_p + B_{p+1}) + A_{p+1} B_p
        prod(&x.a, &ysum, &mut c);
        prod(&x.b, &y.a, &mut c);
    }
    c
}

impl<N: Network> Party<N> {
    /// Shares `x` held by `owner`; other parties pass `None` and the length.
    pub fn share_input(&mut self, owner: PartyId, x: Option<&[u64]>, n: usize) -> Result<Share> {
        self.run(|p| p.share_input_inner(owner, x, n))
    }

    fn share_input_inner(&mut self, owner: PartyId, x: Option<&[u64]>, n: usize) -> Result<Share> {
        self.begin();
        let ring = self.ring();
        let w = ring.byte_len();
        let me = self.id();
        let (o, om1, op1) = (owner, prev(owner), next(owner));
        let alpha = self.zero_share(n, false)?;
        let share = if me == o {
            let x = x.ok_or_else(|| Error::Config("input owner supplied no input".into()))?;
            if x.len() != n {
                return Err(Error::dim(format!("input of length {} declared as {n}", x.len())));
            }
            let x: Vec<u64> = x.iter().map(|&v| ring.reduce(v)).collect();
            let s_o = add_vec(ring, &x, &alpha);
            self.send(om1, proto::INPUT, 1, ring.encode_elems(&s_o), 0)?;
            let b = self.recv_exact(op1, proto::INPUT, 1, n * w)?;
            Share { a: s_o, b: ring.decode_elems(&b).map_err(malformed(op1, me))? }
        } else if me == om1 {
            self.send(op1, proto::INPUT, 1, ring.encode_elems(&alpha), 0)?;
            let b = self.recv_exact(o, proto::INPUT, 1, n * w)?;
            Share { a: alpha.clone(), b: ring.decode_elems(&b).map_err(malformed(o, me))? }
        } else {
            self.send(o, proto::INPUT, 1, ring.encode_elems(&alpha), 0)?;
            let b = self.recv_exact(om1, proto::INPUT, 1, n * w)?;
            Share { a: alpha.clone(), b: ring.decode_elems(&b).map_err(malformed(om1, me))? }
        };
        if self.is_malicious() {
            // The owner's own message is its input and is not checked; the
            // zero-share components forwarded by the others are.
            if me == op1 {
                let sum = add_vec(ring, &share.a, &share.b);
                self.send(o, proto::INPUT, 2, ring.encode_elems(&sum), 0)?;
            } else if me == o {
                let sum = add_vec(ring, &share.b, &alpha);
                self.send(om1, proto::INPUT, 2, ring.encode_elems(&sum), 0)?;
                let got = ring.decode_elems(&self.recv_exact(op1, proto::INPUT, 2, n * w)?).map_err(malformed(op1, me))?;
                if add_vec(ring, &got, &alpha).iter().any(|&v| v != 0) {
                    return Err(Abort::new("input zero-share check").on(op1, me).into());
                }
            }
            if me == om1 {
                let got = ring.decode_elems(&self.recv_exact(o, proto::INPUT, 2, n * w)?).map_err(malformed(o, me))?;
                if add_vec(ring, &got, &alpha).iter().any(|&v| v != 0) {
                    return Err(Abort::new("input zero-share check").on(o, me).into());
                }
            }
        }
        Ok(share)
    }

    /// Opens `s` to every party. In malicious mode both copies of the missing
    /// component are compared and the opening is fenced by release barriers.
    pub fn reveal(&mut self, s: &Share) -> Result<Vec<u64>> {
        self.run(|p| {
            if p.is_malicious() {
                p.barrier(1)?;
            }
            let x = p.open(proto::RECONSTRUCT, s)?;
            if p.is_malicious() {
                p.barrier(2)?;
            }
            Ok(x)
        })
    }

    pub(crate) fn open(&mut self, proto: u8, s: &Share) -> Result<Vec<u64>> {
        self.begin();
        let ring = self.ring();
        let me = self.id();
        let (nx, pv) = (self.next(), self.prev());
        let n = s.len();
        self.send(nx, proto, 1, ring.encode_elems(&s.a), 0)?;
        if self.is_malicious() {
            self.send(pv, proto, 1, ring.encode_elems(&s.b), 0)?;
        }
        let from_prev = self.recv_exact(pv, proto, 1, n * ring.byte_len())?;
        if self.is_malicious() {
            let from_next = self.recv_exact(nx, proto, 1, n * ring.byte_len())?;
            if from_next != from_prev {
                return Err(Abort::new("reconstruction copies").on(pv, me).on(nx, me).into());
            }
        }
        let missing = ring.decode_elems(&from_prev).map_err(malformed(pv, me))?;
        Ok((0..n).map(|i| ring.add(ring.add(s.a[i], s.b[i]), missing[i])).collect())
    }

    /// Elementwise product, not truncated.
    pub fn mul(&mut self, x: &Share, y: &Share) -> Result<Share> {
        self.run(|p| {
            x.check(y)?;
            let ring = p.ring();
            let prod = move |u: &[u64], v: &[u64], out: &mut [u64]| {
                for i in 0..out.len() {
                    out[i] = ring.add(out[i], ring.mul(u[i], v[i]));
                }
            };
            p.reshare(x, y, &prod, x.len())
        })
    }

    /// `(a x b) * (b x c)` row-major matrix product, not truncated.
    pub fn matmul(&mut self, x: &Share, y: &Share, a: usize, b: usize, c: usize) -> Result<Share> {
        self.run(|p| p.matmul_inner(x, y, a, b, c))
    }

    pub(crate) fn matmul_inner(&mut self, x: &Share, y: &Share, a: usize, b: usize, c: usize) -> Result<Share> {
        check_matmul(x, y, a, b, c)?;
        let ring = self.ring();
        let prod = move |u: &[u64], v: &[u64], out: &mut [u64]| matmul_acc(ring, out, u, v, a, b, c);
        self.reshare(x, y, &prod, a * c)
    }

    /// This party's 3-out-of-3 share of `x * y` under `prod`, re-randomised
    /// with a host zero share.
    pub(crate) fn local_product(
        &mut self,
        x: &Share,
        y: &Share,
        prod: &impl Fn(&[u64], &[u64], &mut [u64]),
        n: usize,
    ) -> Vec<u64> {
        products(x, y, false, prod, self.ring(), n)
    }

    fn reshare(&mut self, x: &Share, y: &Share, prod: &impl Fn(&[u64], &[u64], &mut [u64]), n: usize) -> Result<Share> {
        self.begin();
        let ring = self.ring();
        let w = ring.byte_len();
        let me = self.id();
        let (nx, pv) = (self.next(), self.prev());
        let mut z = products(x, y, false, prod, ring, n);
        add_into(ring, &mut z, &self.zero_share(n, false)?);
        if !self.is_malicious() {
            self.send(pv, proto::MUL, 1, ring.encode_elems(&z), 0)?;
            let got = ring.decode_elems(&self.recv_exact(nx, proto::MUL, 1, n * w)?).map_err(malformed(nx, me))?;
            return Ok(Share { a: z, b: got });
        }
        let mut zr = products(x, y, true, prod, ring, n);
        add_into(ring, &mut zr, &self.zero_share(n, true)?);
        let mut payload = ring.encode_elems(&z);
        ring.write_elems(&zr, &mut payload);
        self.send(pv, proto::MUL, 1, payload, 0)?;
        let got = self.recv_exact(nx, proto::MUL, 1, 2 * n * w)?;
        let z_next = ring.decode_elems(&got[..n * w]).map_err(malformed(nx, me))?;
        let zr_next = ring.decode_elems(&got[n * w..]).map_err(malformed(nx, me))?;
        let out = Share { a: z, b: z_next };
        let rot = Share { a: zr, b: zr_next };
        let d = self.open(proto::MUL_CHECK, &out.sub(ring, &rot)?)?;
        if d.iter().any(|&v| v != 0) {
            return Err(Abort::new("multiplication check").on(nx, me).into());
        }
        Ok(out)
    }
}

pub(crate) fn check_matmul(x: &Share, y: &Share, a: usize, b: usize, c: usize) -> Result<()> {
    if x.len() != a * b || y.len() != b * c || x.b.len() != x.a.len() || y.b.len() != y.a.len() {
        return Err(Error::dim(format!("matmul {a}x{b} by {b}x{c} on shares of {} and {}", x.len(), y.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    const R: Ring = Ring::DEFAULT;

    proptest! {
        #[test]
        fn dealt_shares_reconstruct(xs in proptest::collection::vec(0u64..1 << 32, 0..64), seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let v = deal(R, &xs, &mut rng);
            prop_assert_eq!(combine(R, &v), xs.clone());
            // Replication: party p's second component is party p+1's first.
            for p in 0..3 {
                prop_assert_eq!(&v[p].b, &v[(p + 1) % 3].a);
            }
        }

        #[test]
        fn linear_ops_are_local(xs in proptest::collection::vec(0u64..1 << 32, 1..32), c in 0u64..1 << 32, seed in any::<u64>()) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let ys: Vec<u64> = xs.iter().rev().copied().collect();
            let vx = deal(R, &xs, &mut rng);
            let vy = deal(R, &ys, &mut rng);
            let sum = [0, 1, 2].map(|p| vx[p].add(R, &vy[p]).unwrap());
            prop_assert_eq!(combine(R, &sum), add_vec(R, &xs, &ys));
            let sc = [0, 1, 2].map(|p| vx[p].scale(R, c));
            prop_assert_eq!(combine(R, &sc), xs.iter().map(|&x| R.mul(x, c)).collect::<Vec<_>>());
            let k = alloc::vec![c; xs.len()];
            let plus = [0, 1, 2].map(|p| vx[p].add_const(R, p as u8, &k).unwrap());
            prop_assert_eq!(combine(R, &plus), add_vec(R, &xs, &k));
            // Only component s_0 changed.
            prop_assert_eq!(&plus[1], &vx[1]);
        }
    }

    #[test]
    fn rotated_decomposition_sums_to_product() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let xs: Vec<u64> = (0..9).map(|i| R.from_signed(i - 4)).collect();
        let ys: Vec<u64> = (0..9).map(|i| R.from_signed(2 * i + 1)).collect();
        let vx = deal(R, &xs, &mut rng);
        let vy = deal(R, &ys, &mut rng);
        let prod = |u: &[u64], v: &[u64], out: &mut [u64]| matmul_acc(R, out, u, v, 3, 3, 3);
        let want = crate::ring::matmul(R, &xs, &ys, 3, 3, 3);
        for rotated in [false, true] {
            let mut sum = alloc::vec![0u64; 9];
            for p in 0..3 {
                add_into(R, &mut sum, &products(&vx[p], &vy[p], rotated, &prod, R, 9));
            }
            assert_eq!(sum, want);
        }
    }
}
