//! Seeded random streams.
//!
//! Every consumer derives its generator from a root seed plus a fixed tag, and
//! per-sample work uses a distinct ChaCha stream, so results never depend on
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Fixed offsets for the sub-seeds of one experiment.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const META_SPLIT: u64 = 4;
    pub const CLASSIFIER_INIT: u64 = 5;
    pub const ADJUSTER_INIT: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const META_BATCHES: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream identified by `tag`.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for item `index` of a per-sample loop.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}
