//! Counter-based, tuple-addressed random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is a pure function of
//! `(master seed, tag, indices...)`. Replica `i` always draws from the same
//! stream no matter which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        RngPolicy { master_seed }
    }

    /// 64-bit child seed for the tuple; used to hand a sub-experiment its own namespace.
    pub fn derive_seed(&self, tag: &str, indices: &[u64]) -> u64 {
        let mut h = splitmix64(self.master_seed ^ splitmix64(fnv1a(tag)));
        for (pos, &i) in indices.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(i.wrapping_add((pos as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93))));
        }
        h
    }

    pub fn stream(&self, tag: &str, indices: &[u64]) -> StreamRng {
        let root = self.derive_seed(tag, indices);
        let mut key = [0u8; 32];
        let mut h = root;
        for chunk in key.chunks_exact_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
