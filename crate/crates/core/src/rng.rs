//! Seeded random streams.
//!
//! Every consumer of randomness gets its own named substream derived from a
//! single run seed, so adding parallelism or reordering consumers never
//! perturbs another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive an independent generator for `purpose` from the run seed.
pub fn substream(seed: u64, purpose: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Generator seeded directly from an integer.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn substreams_are_independent_and_reproducible() {
        let a: u64 = substream(7, "init").gen();
        let b: u64 = substream(7, "init").gen();
        let c: u64 = substream(7, "mining").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
