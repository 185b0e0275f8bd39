//! Stable seed derivation.
//!
//! Seeds are mixed with FNV-1a over explicit little-endian bytes followed by a
//! SplitMix64 finalizer, so derived streams do not depend on the platform or
//! on `std`'s unspecified hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Incremental builder for a derived seed.
#[derive(Debug, Clone)]
pub struct SeedHasher(u64);

impl SeedHasher {
    pub fn new(root: u64) -> Self {
        let mut h = SeedHasher(FNV_OFFSET);
        h.write_u64(root);
        h
    }

    fn write_bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write_bytes(&v.to_le_bytes());
        self
    }

    pub fn write_f64(&mut self, v: f64) -> &mut Self {
        self.write_u64(v.to_bits())
    }

    pub fn write_str(&mut self, s: &str) -> &mut Self {
        self.write_u64(s.len() as u64);
        self.write_bytes(s.as_bytes());
        self
    }

    pub fn finish(&self) -> u64 {
        splitmix64(self.0)
    }
}

/// Derive a child seed from a parent seed and a stream index.
pub fn child_seed(parent: u64, stream: u64) -> u64 {
    SeedHasher::new(parent).write_u64(stream).finish()
}

pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
