//! Packing of mod-2 shares, least significant bit first.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn packed_len(n: usize) -> usize {
    n.div_ceil(8)
}

pub fn pack(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b & 1) << i))
        .collect()
}

/// Inverse of [`pack`]; padding bits past `n` must be zero.
pub fn unpack(bytes: &[u8], n: usize) -> Result<Vec<u8>> {
    if bytes.len() != packed_len(n) {
        return Err(Error::Frame(alloc::format!(
            "bit vector of {n} needs {} bytes, got {}",
            packed_len(n),
            bytes.len()
        )));
    }
    if n % 8 != 0 && bytes[n / 8] >> (n % 8) != 0 {
        return Err(Error::Frame("nonzero padding in bit vector".into()));
    }
    let mut out = alloc::vec![0u8; n];
    for (chunk, &byte) in out.chunks_mut(8).zip(bytes) {
        for (i, b) in chunk.iter_mut().enumerate() {
            *b = (byte >> i) & 1;
        }
    }
    Ok(out)
}

pub fn xor_into(acc: &mut [u8], xs: &[u8]) {
    for (a, &x) in acc.iter_mut().zip(xs) {
        *a ^= x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_lsb_first() {
        assert_eq!(pack(&[1, 0, 0, 0, 0, 0, 0, 0, 1]), alloc::vec![1, 1]);
        assert_eq!(pack(&[]), Vec::<u8>::new());
    }

    #[test]
    fn padding_is_rejected() {
        assert!(unpack(&[0b1000_0000], 7).is_err());
        assert!(unpack(&[0b0100_0000], 7).is_ok());
        assert!(unpack(&[0, 0], 8).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(bits in proptest::collection::vec(0u8..2, 0..100)) {
            let packed = pack(&bits);
            prop_assert_eq!(packed.len(), packed_len(bits.len()));
            prop_assert_eq!(unpack(&packed, bits.len()).unwrap(), bits);
        }
    }
}
