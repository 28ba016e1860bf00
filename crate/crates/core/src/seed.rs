//! Seed derivation. Every random draw in the crate comes from a stream
//! whose seed is a hash of the global seed plus a textual context, so a
//! given (problem, path) always sees the same initialisation and batches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hashes an arbitrary list of parts into a 64-bit seed.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_from(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Identity of one training run: all of its randomness hangs off this key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub global_seed: u64,
    pub problem_id: String,
    pub path_signature: String,
}

impl SeedKey {
    pub fn new(global_seed: u64, problem_id: impl Into<String>, path_signature: impl Into<String>) -> Self {
        Self {
            global_seed,
            problem_id: problem_id.into(),
            path_signature: path_signature.into(),
        }
    }

    pub fn stream(&self, label: &str, index: u64) -> ChaCha8Rng {
        rng_from(&[
            &self.global_seed.to_le_bytes(),
            self.problem_id.as_bytes(),
            self.path_signature.as_bytes(),
            label.as_bytes(),
            &index.to_le_bytes(),
        ])
    }

    /// Stream for parameter initialisation of the module at `layer_index`.
    pub fn init_stream(&self, layer_index: usize) -> ChaCha8Rng {
        self.stream("init", layer_index as u64)
    }

    /// Stream for minibatch shuffling.
    pub fn shuffle_stream(&self) -> ChaCha8Rng {
        self.stream("shuffle", 0)
    }
}
