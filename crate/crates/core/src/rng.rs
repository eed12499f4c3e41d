//! Counter-based stream splitting.
//!
//! Every replicate derives its own generator from `(master seed, domain,
//! index)` by random access into a ChaCha8 keystream, so results do not
//! depend on which worker ran which replicate or in what order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic operation in the crate.
pub type StreamRng = ChaCha8Rng;

/// Purpose tags that keep the streams of different consumers disjoint.
pub mod domain {
    pub const ENVIRONMENT: u64 = 1;
    pub const TRAJECTORY: u64 = 2;
    pub const HORIZON: u64 = 3;
    pub const FIXED_IMMIGRATION: u64 = 4;
    pub const KAPPA: u64 = 5;
    pub const LYAPUNOV: u64 = 6;
    pub const PRECONDITION: u64 = 7;
    pub const QUENCHED_ENVIRONMENT: u64 = 8;
}

/// Generator seeded directly from a 64-bit seed.
pub fn from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives the seed of replicate `index` in `domain`.
///
/// The value is word `2 * index` of the ChaCha8 keystream keyed by `master`
/// on stream `domain`; it costs O(1) regardless of `index`.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(domain);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Generator for replicate `index` in `domain`.
pub fn replicate_rng(master: u64, domain: u64, index: u64) -> StreamRng {
    from_seed(derive_seed(master, domain, index))
}
