//! Seed splitting. Every random stream in a run is derived from one root seed
//! and a stream label so that a single integer reproduces the whole run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer over `root` mixed with `stream`.
pub fn derive(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(root: u64, stream: u64) -> Rng {
    rng(derive(root, stream))
}

/// Stream labels for the components of a training run.
pub mod streams {
    pub const INIT_AGGREGATOR: u64 = 1;
    pub const INIT_CLASSIFIER: u64 = 2;
    pub const INIT_POLICY: u64 = 3;
    pub const REPRESENTATION: u64 = 4;
    pub const SELECTION: u64 = 5;
    pub const COLLECTION: u64 = 6;
    pub const PPO: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const NOISE: u64 = 9;
}
