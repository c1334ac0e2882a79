//! Shared test support: seeded random documents, output corruption, the
//! Lison fixture and brute-force reference implementations.

pub mod corrupt;
pub mod fixtures;
pub mod gen;
pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
