//! Seeded random streams.
//!
//! One root seed feeds every stochastic consumer; each consumer derives its
//! own ChaCha stream from `sha256(root || purpose)`, so adding or removing a
//! consumer never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

/// Initializes the root generator for a run.
pub fn seed_all(seed: u64) -> SeedTree {
    SeedTree { root: seed }
}

impl SeedTree {
    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn stream(&self, purpose: &str) -> StreamRng {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update(purpose.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(seed)
    }

    /// A stable 64-bit sub-seed for `purpose`.
    pub fn derive(&self, purpose: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.root.to_le_bytes());
        h.update(purpose.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}
