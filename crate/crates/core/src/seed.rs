//! Deterministic derivation of RNG streams from a master seed.
//!
//! A stream is named by the master seed plus an ordered list of labels. The
//! canonical encoding is the ASCII tag `pphi.seed.v1`, the master seed as
//! little-endian u64, then per label a type byte (`0x01` string, `0x02`
//! integer) followed by the payload (strings as u64 length + UTF-8 bytes,
//! integers as little-endian u64). The derived seed is the first eight bytes
//! of the SHA-256 digest read as little-endian u64. This encoding is stable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Component of a stream name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(s: &'a str) -> Self {
        Label::Str(s)
    }
}

impl From<u64> for Label<'_> {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label<'_> {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

const DOMAIN: &[u8] = b"pphi.seed.v1";

pub fn derive_seed(master: u64, labels: &[Label<'_>]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN);
    hasher.update(master.to_le_bytes());
    for label in labels {
        match label {
            Label::Str(s) => {
                hasher.update([0x01]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            Label::Int(v) => {
                hasher.update([0x02]);
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for a derived seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the stream `(master, labels)`.
pub fn derive_rng(master: u64, labels: &[Label<'_>]) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, labels))
}
