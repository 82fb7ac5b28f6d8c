//! Hierarchical, named random streams.
//!
//! Every stochastic element draws from its own ChaCha8 stream whose seed is
//! a SHA-256 digest of the path from the master seed, so adding or removing
//! one consumer never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    key: [u8; 32],
}

impl SeedTree {
    pub fn new(master_seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"phdnet/root");
        h.update(master_seed.to_le_bytes());
        Self { key: h.finalize().into() }
    }

    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update([0u8]);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        Self { key: h.finalize().into() }
    }

    pub fn index(&self, i: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update([1u8]);
        h.update(i.to_le_bytes());
        Self { key: h.finalize().into() }
    }

    /// Shorthand for `child(label).index(i)`.
    pub fn at(&self, label: &str, i: u64) -> Self {
        self.child(label).index(i)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key)
    }

    pub fn key(&self) -> [u8; 32] {
        self.key
    }
}
