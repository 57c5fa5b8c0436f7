//! Seeded random sources.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a user
//! seed and a stream id, so that independent consumers (chunks of a Monte-Carlo
//! loop, initialisation vs. minibatches) never share state.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const PROJECTIONS: u64 = 6;
    pub const NOISE: u64 = 7;
    /// Monte-Carlo chunk `k` uses stream `CHUNK_BASE + k`.
    pub const CHUNK_BASE: u64 = 1 << 32;
}
