//! Counter-style random streams: each stream is seeded by hashing a seed, a
//! role name and integer ids, so draws never depend on what ran before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub(crate) fn stream(seed: u64, role: &str, ids: &[usize]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((role.len() as u64).to_le_bytes());
    h.update(role.as_bytes());
    for &id in ids {
        h.update((id as u64).to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}
