//! Mocked attestation: a fixture certificate authority, Schnorr signatures and
//! signed Diffie-Hellman over a safe-prime MODP group.

use alloc::vec::Vec;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand_core::RngCore;
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::Result;
use crate::net::PartyId;
use crate::prf::PrfKey;

const RFC3526_2048: &str = "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7EDEE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3BE39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";
const TEST_256: &str = "de06b185c6647e96d3e4b603a0e42bc1a337d92d52173d006442fb297f9419b7";

/// Prime-order subgroup of `Z_p^*` for a safe prime `p = 2q + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Group {
    pub p: BigUint,
    pub q: BigUint,
    pub g: BigUint,
}

impl Group {
    fn safe_prime(hex: &str, g: u32) -> Self {
        let p = BigUint::parse_bytes(hex.as_bytes(), 16).expect("valid hex prime");
        let q = (&p - 1u32) >> 1;
        Group { p, q, g: BigUint::from(g) }
    }

    /// RFC 3526 group 14 (2048-bit MODP), generator 2.
    pub fn rfc3526_2048() -> Self {
        Self::safe_prime(RFC3526_2048, 2)
    }

    /// A 256-bit safe-prime group for fast tests; generator 4 (a quadratic residue).
    pub fn test_256() -> Self {
        Self::safe_prime(TEST_256, 4)
    }

    /// Bits of secret exponents: the full order for small groups, 256 otherwise.
    pub fn exponent_bits(&self) -> u64 {
        self.q.bits().min(256)
    }

    pub fn pow(&self, base: &BigUint, e: &BigUint) -> BigUint {
        base.modpow(e, &self.p)
    }

    pub fn is_element(&self, y: &BigUint) -> bool {
        !y.is_zero() && y < &self.p && !y.is_one() && self.pow(y, &self.q).is_one()
    }

    pub fn random_scalar(&self, rng: &mut impl RngCore) -> BigUint {
        let bytes = self.exponent_bits().div_ceil(8) as usize;
        loop {
            let mut buf = alloc::vec![0u8; bytes];
            rng.fill_bytes(&mut buf);
            let x = BigUint::from_bytes_be(&buf) % &self.q;
            if !x.is_zero() {
                return x;
            }
        }
    }

    fn hash_to_scalar(&self, parts: &[&[u8]]) -> BigUint {
        let mut out = Vec::with_capacity(64);
        for ctr in 0u8..2 {
            let mut h = Sha256::new();
            h.update([ctr]);
            for p in parts {
                h.update((p.len() as u32).to_le_bytes());
                h.update(p);
            }
            out.extend_from_slice(&h.finalize());
        }
        BigUint::from_bytes_be(&out) % &self.q
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigningKey {
    x: BigUint,
    pub public: BigUint,
}

impl SigningKey {
    pub fn generate(group: &Group, rng: &mut impl RngCore) -> Self {
        let x = group.random_scalar(rng);
        let public = group.pow(&group.g, &x);
        SigningKey { x, public }
    }

    /// Schnorr signature `(e, s)` with a deterministic nonce.
    pub fn sign(&self, group: &Group, msg: &[u8]) -> Signature {
        let k = group.hash_to_scalar(&[b"nonce", &self.x.to_bytes_be(), msg]);
        let k = if k.is_zero() { BigUint::one() } else { k };
        let r = group.pow(&group.g, &k);
        let e = group.hash_to_scalar(&[b"challenge", &r.to_bytes_be(), &self.public.to_bytes_be(), msg]);
        let s = (k + &e * &self.x) % &group.q;
        Signature { e, s }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub e: BigUint,
    pub s: BigUint,
}

impl Signature {
    pub fn verify(&self, group: &Group, public: &BigUint, msg: &[u8]) -> bool {
        if !group.is_element(public) || self.e >= group.q || self.s >= group.q {
            return false;
        }
        let neg_e = (&group.q - &self.e) % &group.q;
        let r = (group.pow(&group.g, &self.s) * group.pow(public, &neg_e)) % &group.p;
        let e = group.hash_to_scalar(&[b"challenge", &r.to_bytes_be(), &public.to_bytes_be(), msg]);
        e == self.e
    }

    fn write(&self, w: &mut Writer) {
        w.big(&self.e).big(&self.s);
    }

    fn read(r: &mut Reader) -> Result<Self> {
        Ok(Signature { e: r.big()?, s: r.big()? })
    }
}

/// Binding of a party index to a device signing key, issued by the CA.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cert {
    pub party: PartyId,
    pub device_key: BigUint,
    pub sig: Signature,
}

impl Cert {
    fn statement(party: PartyId, device_key: &BigUint) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"lth-cert").u8(party).big(device_key);
        w.finish()
    }

    pub fn verify(&self, group: &Group, ca_key: &BigUint) -> bool {
        self.sig.verify(group, ca_key, &Self::statement(self.party, &self.device_key))
    }

    pub fn write(&self, w: &mut Writer) {
        w.u8(self.party).big(&self.device_key);
        self.sig.write(w);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(Cert {
            party: r.u8()?,
            device_key: r.big()?,
            sig: Signature::read(r)?,
        })
    }
}

/// Fixture certificate authority.
#[derive(Clone, Debug)]
pub struct Ca {
    group: Group,
    key: SigningKey,
}

impl Ca {
    pub fn new(group: Group, rng: &mut impl RngCore) -> Self {
        let key = SigningKey::generate(&group, rng);
        Ca { group, key }
    }

    pub fn public(&self) -> &BigUint {
        &self.key.public
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    /// Generates a device key for `party` and certifies it.
    pub fn provision(&self, party: PartyId, rng: &mut impl RngCore) -> Device {
        let key = SigningKey::generate(&self.group, rng);
        let cert = self.issue(party, &key.public);
        Device { key, cert }
    }

    pub fn issue(&self, party: PartyId, device_key: &BigUint) -> Cert {
        Cert {
            party,
            device_key: device_key.clone(),
            sig: self.key.sign(&self.group, &Cert::statement(party, device_key)),
        }
    }
}

/// Signing key and certificate burned into a trusted component.
#[derive(Clone, Debug)]
pub struct Device {
    pub key: SigningKey,
    pub cert: Cert,
}

/// A device's signed statement over its public Diffie-Hellman value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub party: PartyId,
    pub config: [u8; 32],
    pub dh_public: BigUint,
    pub cert: Cert,
    pub sig: Signature,
}

impl Attestation {
    pub fn statement(party: PartyId, config: &[u8; 32], dh_public: &BigUint) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"lth-quote").u8(party).raw(config).big(dh_public);
        w.finish()
    }

    /// Certificate chain and signature check.
    pub fn verify(&self, group: &Group, ca_key: &BigUint) -> bool {
        self.cert.party == self.party
            && self.cert.verify(group, ca_key)
            && group.is_element(&self.dh_public)
            && self.sig.verify(
                group,
                &self.cert.device_key,
                &Self::statement(self.party, &self.config, &self.dh_public),
            )
    }

    pub fn write(&self, w: &mut Writer) {
        w.u8(self.party).raw(&self.config).big(&self.dh_public);
        self.cert.write(w);
        self.sig.write(w);
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        Ok(Attestation {
            party: r.u8()?,
            config: r.take(32)?.try_into().unwrap(),
            dh_public: r.big()?,
            cert: Cert::read(r)?,
            sig: Signature::read(r)?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Reader::new(b);
        let a = Self::read(&mut r)?;
        r.end()?;
        Ok(a)
    }
}

/// PRF key for the pair `{a, b}` from the shared Diffie-Hellman value.
pub fn derive_pair_key(a: PartyId, b: PartyId, shared: &BigUint) -> PrfKey {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut h = Sha256::new();
    h.update(b"lth-pair-key");
    h.update([lo, hi]);
    h.update(shared.to_bytes_be());
    let d = h.finalize();
    let mut k = [0u8; 16];
    k.copy_from_slice(&d[..16]);
    PrfKey::from_bytes(k)
}
