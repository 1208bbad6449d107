//! Block hashing. The digest is treated as an opaque uniform bit source and
//! is computed from the payload only, never from user-specific data.

use sha2::{Digest, Sha256};

use crate::error::{AirconError, Result};
use crate::lattice::{encode_bits, Codebook, HashSymbolVector};

pub const DEFAULT_HASH_BITS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateBlock {
    payload: Vec<u8>,
    pub height: u64,
}

impl CandidateBlock {
    pub fn new(payload: Vec<u8>, height: u64) -> Result<Self> {
        if payload.is_empty() {
            return Err(AirconError::invalid("block payload must be non-empty"));
        }
        Ok(CandidateBlock { payload, height })
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashValue {
    bits: Vec<bool>,
}

impl HashValue {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_symbols(&self, cb: &Codebook) -> Result<HashSymbolVector> {
        encode_bits(&self.bits, cb)
    }
}

/// SHA-256 of the payload, truncated to `bits` bits (MSB first). Lengths
/// beyond 256 bits are expanded in counter mode over `payload || be32(i)`.
pub fn hash_block(block: &CandidateBlock, bits: usize) -> Result<HashValue> {
    if bits == 0 {
        return Err(AirconError::invalid("hash length must be at least one bit"));
    }
    let payload = block.payload();
    if payload.is_empty() {
        return Err(AirconError::invalid("block payload must be non-empty"));
    }
    let mut out = Vec::with_capacity(bits);
    let mut counter: u32 = 0;
    while out.len() < bits {
        let mut h = Sha256::new();
        h.update(payload);
        if counter > 0 {
            h.update(counter.to_be_bytes());
        }
        for byte in h.finalize() {
            for shift in (0..8).rev() {
                if out.len() == bits {
                    break;
                }
                out.push((byte >> shift) & 1 == 1);
            }
        }
        counter += 1;
    }
    Ok(HashValue { bits: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_codebook;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn block(p: &[u8]) -> CandidateBlock {
        CandidateBlock::new(p.to_vec(), 0).unwrap()
    }

    #[test]
    fn deterministic() {
        let b = block(b"transactions");
        assert_eq!(hash_block(&b, 128).unwrap(), hash_block(&b, 128).unwrap());
    }

    #[test]
    fn height_is_not_hashed() {
        let a = CandidateBlock::new(b"same".to_vec(), 1).unwrap();
        let b = CandidateBlock::new(b"same".to_vec(), 9).unwrap();
        assert_eq!(hash_block(&a, 128).unwrap(), hash_block(&b, 128).unwrap());
    }

    #[test]
    fn lengths() {
        let b = block(b"x");
        assert_eq!(hash_block(&b, 128).unwrap().len(), 128);
        assert_eq!(hash_block(&b, 1).unwrap().len(), 1);
        assert_eq!(hash_block(&b, 600).unwrap().len(), 600);
        // a longer hash extends the shorter one
        let short = hash_block(&b, 100).unwrap();
        let long = hash_block(&b, 300).unwrap();
        assert_eq!(&long.bits()[..100], short.bits());
    }

    #[test]
    fn errors() {
        assert!(CandidateBlock::new(vec![], 0).is_err());
        assert!(hash_block(&block(b"x"), 0).is_err());
    }

    #[test]
    fn one_byte_changes_never_collide() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut collisions = 0;
        for _ in 0..1000 {
            let mut p: Vec<u8> = (0..32).map(|_| rng.random()).collect();
            let a = hash_block(&block(&p), 128).unwrap();
            let i = rng.random_range(0..p.len());
            p[i] = p[i].wrapping_add(rng.random_range(1..=255));
            let b = hash_block(&block(&p), 128).unwrap();
            if a == b {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn distinct_payloads_distinct_hashes() {
        let mut seen = HashSet::new();
        for i in 0u32..2000 {
            let h = hash_block(&block(&i.to_le_bytes()), 128).unwrap();
            assert!(seen.insert(h));
        }
    }

    #[test]
    fn encoded_digests_are_uncorrelated() {
        // normalized inner product of vectors from distinct payloads has mean ~ 0
        let cb = build_codebook();
        let n = 4000;
        let mut sum = 0.0;
        for i in 0u32..n {
            let a = hash_block(&block(&[b"a".as_slice(), &i.to_le_bytes()].concat()), 128)
                .unwrap()
                .to_symbols(&cb)
                .unwrap();
            let b = hash_block(&block(&[b"b".as_slice(), &i.to_le_bytes()].concat()), 128)
                .unwrap()
                .to_symbols(&cb)
                .unwrap();
            sum += a.dot(b.symbols()) as f64 / a.norm_sqr() as f64;
        }
        let mean = sum / n as f64;
        // per-sample sd is about sqrt(43 * 1.125) / 64.5 ~ 0.11
        assert!(mean.abs() < 4.0 * 0.11 / (n as f64).sqrt(), "mean {mean}");
    }
}
