//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by hashing a user seed together
//! with a list of integer tags (experiment cell, replication, purpose), so a
//! replication's draws do not depend on how work is scheduled across threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Tag for the stream that draws bootstrap sign vectors.
pub const SIGN_TAG: u64 = 0x5349_474e;
/// Tag for the stream that draws simulated data.
pub const DATA_TAG: u64 = 0x4441_5441;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 stream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform on the open interval (0, 1).
pub fn open_uniform<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal draws by inversion.
pub struct NormalSampler {
    dist: Normal,
}

impl Default for NormalSampler {
    fn default() -> Self {
        Self {
            dist: Normal::new(0.0, 1.0).expect("valid parameters"),
        }
    }
}

impl NormalSampler {
    pub fn draw<R: RngCore>(&self, rng: &mut R) -> f64 {
        self.dist.inverse_cdf(open_uniform(rng))
    }
}

/// FNV-1a hash, used to give experiment cells stable ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
