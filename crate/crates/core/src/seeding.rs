//! Deterministic seed derivation.
//!
//! Every random decision in the crate draws from a ChaCha stream whose seed
//! is a SHA-256 digest of a base seed plus labelled components, so streams
//! are stable across platforms, thread schedules and run order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone)]
pub struct SeedStream {
    hasher: Sha256,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"fairprobe/v1");
        hasher.update(seed.to_le_bytes());
        Self { hasher }
    }

    pub fn with_str(mut self, part: &str) -> Self {
        // length prefix keeps ("ab","c") and ("a","bc") apart
        self.hasher.update((part.len() as u64).to_le_bytes());
        self.hasher.update(part.as_bytes());
        self
    }

    pub fn with_u64(mut self, part: u64) -> Self {
        self.hasher.update(b"#");
        self.hasher.update(part.to_le_bytes());
        self
    }

    pub fn seed(self) -> u64 {
        let digest = self.hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
