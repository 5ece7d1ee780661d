//! Seed-derived named RNG streams.
//!
//! Every source of randomness (parameter init, dropout masks, batch shuffling)
//! draws from its own stream keyed by `(master seed, stream name, indices)`.
//! The key is hashed with SHA-256 into a ChaCha8 seed, so streams are
//! independent by construction: draws on one stream never shift another, and
//! a mask for (epoch 3, window 17) is the same no matter which thread or batch
//! computed it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STREAM_INIT: &str = "init";
pub const STREAM_DROPOUT: &str = "dropout";
pub const STREAM_SHUFFLE: &str = "shuffle";
pub const STREAM_BENCH: &str = "bench";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream keyed by name alone.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        self.stream_at(name, &[])
    }

    /// Stream keyed by name plus counter indices (epoch, window, ...).
    pub fn stream_at(&self, name: &str, indices: &[u64]) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update([name.len() as u8]);
        hasher.update(name.as_bytes());
        for ix in indices {
            hasher.update(ix.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}
