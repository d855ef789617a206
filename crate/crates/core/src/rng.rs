//! Seed derivation. Every random decision in a run is drawn from a stream keyed by
//! a path of integer tags under the master seed, so any piece (one column of one
//! layer's sampled matrix at one iteration, say) can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a master seed together with a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t.wrapping_add(0xA5A5_A5A5))))
}

/// A position in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn child(&self, tag: u64) -> Stream {
        Stream {
            key: derive_seed(self.key, &[tag]),
        }
    }

    pub fn path(&self, tags: &[u64]) -> Stream {
        Stream {
            key: derive_seed(self.key, tags),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// Well-known first-level tags.
pub mod tag {
    pub const GRAPH: u64 = 1;
    pub const FEATURES: u64 = 2;
    pub const TARGET: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const NODE: u64 = 8;
    pub const LAYER: u64 = 9;
}
