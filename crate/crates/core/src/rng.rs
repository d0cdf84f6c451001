//! Seeded random streams.
//!
//! Every consumer of randomness asks for a named stream derived from one
//! master seed. The stream seed is `SHA-256(master_seed_le || name)`, so
//! adding a new consumer never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Provenance of a random stream: the master seed plus the stream name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub stream: String,
}

impl SeedRecord {
    pub fn new(master: u64, stream: impl Into<String>) -> Self {
        Self {
            master,
            stream: stream.into(),
        }
    }

    /// Child record, `parent/child`.
    pub fn child(&self, name: &str) -> Self {
        Self::new(self.master, format!("{}/{}", self.stream, name))
    }

    pub fn rng(&self) -> StreamRng {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update(self.stream.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        StreamRng::from_seed(seed)
    }
}

impl std::fmt::Display for SeedRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.master, self.stream)
    }
}
