//! Seed derivation.
//!
//! Every random stream in the benchmark is keyed by an explicit 64-bit seed.
//! Child seeds are derived with the SplitMix64 finalizer so that adding
//! scenes or streams never reshuffles existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of scene `index` under `master_seed`:
/// `mix64(master_seed + (index + 1) * GOLDEN_GAMMA)`.
pub fn scene_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Independent sub-stream of `seed` identified by `stream`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA)))
}

/// Named sub-streams used by the sweep.
pub mod stream {
    pub const LIDAR_RENDER: u64 = 1;
    pub const LIDAR_DROPOUT: u64 = 2;
    /// Camera `i` uses `CAMERA_MASK_BASE + i`.
    pub const CAMERA_MASK_BASE: u64 = 0x100;
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
