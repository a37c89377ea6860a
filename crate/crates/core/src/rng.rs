//! Deterministic random streams.
//!
//! Every particle of every iteration draws from its own ChaCha stream, so
//! results depend only on the seed and never on how work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for `(seed, iteration, particle)`.
pub fn stream_rng(seed: u64, iteration: u32, particle: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | particle as u64);
    rng
}

/// Plain seeded generator for sequential algorithms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
