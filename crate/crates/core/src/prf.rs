//! AES-128 keyed pseudo-random function with counter banks and an audit log.
//!
//! Block input: 64-bit counter little-endian in bytes `0..8`, bank index in
//! byte 8, zero elsewhere. Masks narrower than 128 bits take the low-order
//! bits of one block; one block per mask element.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use alloc::vec::Vec;
use core::fmt;

use crate::net::PartyId;

/// Bank index bytes.
pub mod bank {
    /// Primary counter for key `j`.
    pub const fn ctr(j: usize) -> u8 {
        j as u8
    }
    /// Primary share counter.
    pub const S: u8 = 3;
    /// Offset of the duplicate counters used by the replicated execution.
    pub const DUP: u8 = 4;
    /// Host-level zero shares.
    pub const HOST: u8 = 8;
    /// Host-level zero shares for the rotated recomputation.
    pub const HOST_ROT: u8 = 9;
    /// Key forwarding during initialisation.
    pub const INIT: u8 = 0x10;
}

pub const KEY_LEN: usize = 16;

#[derive(Clone, PartialEq, Eq)]
pub struct PrfKey([u8; KEY_LEN]);

impl PrfKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        PrfKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn to_u128(&self) -> u128 {
        u128::from_le_bytes(self.0)
    }

    pub fn from_u128(v: u128) -> Self {
        PrfKey(v.to_le_bytes())
    }
}

impl fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrfKey(..)")
    }
}

/// Which pair of parties shares a key: `pair = j` names `k_{j,j+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyLabel {
    Lth(u8),
    Host(u8),
}

impl fmt::Display for KeyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, j) = match *self {
            KeyLabel::Lth(j) => ("lth", j),
            KeyLabel::Host(j) => ("host", j),
        };
        write!(f, "{tag}:k{}{}", j + 1, (j + 1) % 3 + 1)
    }
}

/// One PRF consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AuditRecord {
    pub party: PartyId,
    pub key: KeyLabel,
    pub bank: u8,
    pub counter: u64,
    /// Bits of the block used by the consumer.
    pub width: u8,
}

#[derive(Clone, Debug, Default)]
pub struct AuditLog {
    enabled: bool,
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn enable(&mut self) {
        self.enabled = true;
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn record_range(&mut self, party: PartyId, key: KeyLabel, bank: u8, start: u64, n: usize, width: u8) {
        if !self.enabled {
            return;
        }
        self.records.extend((0..n as u64).map(|t| AuditRecord {
            party,
            key,
            bank,
            counter: start + t,
            width,
        }));
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn take(&mut self) -> Vec<AuditRecord> {
        core::mem::take(&mut self.records)
    }

    /// Records whose `(party, key, bank, counter)` occurs more than once.
    pub fn duplicates(records: &[AuditRecord]) -> Vec<AuditRecord> {
        let mut keys: Vec<_> = records.iter().map(|r| (r.party, r.key, r.bank, r.counter)).collect();
        keys.sort_unstable();
        let mut out = Vec::new();
        for w in keys.windows(2) {
            if w[0] == w[1] {
                out.push(AuditRecord {
                    party: w[0].0,
                    key: w[0].1,
                    bank: w[0].2,
                    counter: w[0].3,
                    width: 0,
                });
            }
        }
        out
    }
}

/// The keyed block function.
#[derive(Clone)]
pub struct Prf {
    cipher: Aes128,
}

impl fmt::Debug for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Prf(..)")
    }
}

fn input_block(ctr: u64, bank: u8) -> [u8; 16] {
    let mut b = [0u8; 16];
    b[..8].copy_from_slice(&ctr.to_le_bytes());
    b[8] = bank;
    b
}

impl Prf {
    pub fn new(key: &PrfKey) -> Self {
        Prf {
            cipher: Aes128::new(GenericArray::from_slice(key.as_bytes())),
        }
    }

    /// Raw AES-128 encryption of one block.
    pub fn encrypt(&self, block: [u8; 16]) -> [u8; 16] {
        let mut b = GenericArray::from(block);
        self.cipher.encrypt_block(&mut b);
        b.into()
    }

    pub fn block(&self, ctr: u64, bank: u8) -> u128 {
        u128::from_le_bytes(self.encrypt(input_block(ctr, bank)))
    }

    /// Blocks for counters `start .. start + n`.
    pub fn blocks(&self, start: u64, n: usize, bank: u8) -> Vec<u128> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [GenericArray::from(input_block(0, bank)); 32];
        let mut ctr = start;
        while out.len() < n {
            let k = (n - out.len()).min(buf.len());
            for b in &mut buf[..k] {
                b[..8].copy_from_slice(&ctr.to_le_bytes());
                b[8..].fill(0);
                b[8] = bank;
                ctr = ctr.wrapping_add(1);
            }
            self.cipher.encrypt_blocks(&mut buf[..k]);
            out.extend(buf[..k].iter().map(|b| u128::from_le_bytes(b.as_slice().try_into().unwrap())));
        }
        out
    }
}

/// Four monotone counters: one per key plus the share counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterBank {
    pub ctr: [u64; 4],
}

impl CounterBank {
    pub const S: usize = 3;

    /// Advances every counter by `n`, returning the previous values.
    pub fn reserve(&mut self, n: usize) -> [u64; 4] {
        let base = self.ctr;
        for c in &mut self.ctr {
            *c += n as u64;
        }
        base
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(s: &str) -> [u8; 16] {
        let mut out = [0u8; 16];
        for (i, o) in out.iter_mut().enumerate() {
            *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap();
        }
        out
    }

    #[test]
    fn aes128_known_answer() {
        let prf = Prf::new(&PrfKey::from_bytes(hex("000102030405060708090a0b0c0d0e0f")));
        let ct = prf.encrypt(hex("00112233445566778899aabbccddeeff"));
        assert_eq!(ct, hex("69c4e0d86a7b0430d8cdb78070b4c55a"));
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let prf = Prf::new(&PrfKey::from_bytes([9; 16]));
        assert_eq!(prf.block(42, 3), prf.block(42, 3));
        let batch = prf.blocks(40, 5, 3);
        for (t, b) in batch.iter().enumerate() {
            assert_eq!(*b, prf.block(40 + t as u64, 3));
        }
        assert_ne!(prf.block(42, 3), prf.block(42, 4));
    }

    #[test]
    fn distinct_counters_give_distinct_blocks() {
        let prf = Prf::new(&PrfKey::from_bytes([1; 16]));
        let blocks = prf.blocks(0, 10_000, bank::S);
        for w in blocks.windows(2) {
            assert_ne!(w[0], w[1]);
        }
        let mut sorted = blocks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), blocks.len());
        // Roughly half the bits of the low word are set on average.
        let ones: u32 = blocks.iter().map(|b| (*b as u64).count_ones()).sum();
        let mean = ones as f64 / blocks.len() as f64;
        assert!((mean - 32.0).abs() < 0.5, "mean popcount {mean}");
    }

    #[test]
    fn reserve_advances_all_counters() {
        let mut c = CounterBank::default();
        assert_eq!(c.reserve(5), [0; 4]);
        assert_eq!(c.reserve(0), [5; 4]);
        assert_eq!(c.ctr, [5; 4]);
    }

    #[test]
    fn audit_duplicates() {
        let mut log = AuditLog::default();
        log.record_range(0, KeyLabel::Lth(1), 3, 0, 4, 32);
        assert!(log.records().is_empty());
        log.enable();
        log.record_range(0, KeyLabel::Lth(1), 3, 0, 4, 32);
        log.record_range(0, KeyLabel::Lth(1), 3, 3, 2, 32);
        log.record_range(1, KeyLabel::Lth(1), 3, 0, 4, 32);
        let d = AuditLog::duplicates(log.records());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].counter, 3);
    }

    #[test]
    fn key_label_display() {
        assert_eq!(alloc::format!("{}", KeyLabel::Lth(0)), "lth:k12");
        assert_eq!(alloc::format!("{}", KeyLabel::Host(2)), "host:k31");
    }
}
