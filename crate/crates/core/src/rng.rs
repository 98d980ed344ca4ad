//! Named, independent random substreams derived from one master seed.
//!
//! Each component of a run (pretraining, buffer build, stream order,
//! corruption noise, lambda draws, exemplar draws) gets its own stream so
//! that changing one component's consumption cannot shift another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a deterministic RNG for `name` from `master_seed`.
pub fn substream(master_seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}
