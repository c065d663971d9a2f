//! Seed derivation. A master seed is split into component seeds by hashing
//! `(master, counter)` with SplitMix64; each chain or restart then draws from
//! a ChaCha8 stream selected by its index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counters for the components of an experiment.
pub mod component {
    pub const VQE: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const CHAINS: u64 = 3;
    pub const NQS_INIT: u64 = 4;
    pub const SR: u64 = 5;
    pub const NOISE: u64 = 6;
    pub const CONCAT: u64 = 7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of component `counter` under `master`.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    splitmix64(master ^ splitmix64(counter))
}

/// Independent generator for worker `stream` of a component.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
