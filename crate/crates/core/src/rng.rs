//! Seeded random streams. Nothing in the crate reads global randomness.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two seeds into a fresh one.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    stream(a, b ^ 0x9e37_79b9_7f4a_7c15).next_u64()
}

/// Stream assignments inside one experiment seed.
pub mod streams {
    pub const AGENT: u64 = 1;
    pub const ENVIRONMENT: u64 = 2;
}
