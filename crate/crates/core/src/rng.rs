//! Seed derivation and RNG construction.
//!
//! Every stochastic stage (dataset draws, pair construction, training noise,
//! sampling chains) owns a ChaCha stream derived from a user-facing `u64`
//! seed plus a fixed stage salt. Identical seeds therefore reproduce every
//! artifact byte-for-byte, and independent stages never share a stream.

use crate::point::Point2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stage salts for [`derive_seed`]. One per stochastic stage.
pub mod salt {
    pub const DATA_CLEAN: u64 = 0x01;
    pub const DATA_CORRUPT: u64 = 0x02;
    pub const PAIRS: u64 = 0x03;
    pub const NET_INIT: u64 = 0x04;
    pub const TRAIN: u64 = 0x05;
    pub const SAMPLE: u64 = 0x06;
}

/// SplitMix64 mix of a base seed and a salt; used to hand independent
/// sub-seeds to pipeline stages.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG for one stage: ChaCha8 keyed by the seed, with `stream`
/// selecting an independent substream (e.g. one per sampling chain).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal 2D draw (x first, then y).
pub fn standard_normal_point(rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}
