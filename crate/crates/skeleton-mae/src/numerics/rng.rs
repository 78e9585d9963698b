//! Stateless random-stream derivation.
//!
//! Every source of randomness (parameter init, shuffling, mask sampling,
//! coordinate noise) draws from its own ChaCha8 stream keyed by
//! `(seed, purpose, epoch, index)`. Streams are independent of call order,
//! so a resumed run re-derives exactly the randomness the original run
//! would have used at the same point.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent RNG for `(seed, purpose, epoch, index)`.
pub fn stream(seed: u64, purpose: &str, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(purpose.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&epoch.to_le_bytes());
    key[24..32].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
