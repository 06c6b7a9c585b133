//! Counter-based random streams.
//!
//! Every stochastic unit of work (a trial, a restart, a probe draw block) gets
//! its own ChaCha stream addressed by `(seed, domain, index)`. The stream
//! content depends only on that address, so results do not depend on the
//! order in which parallel workers pick up their work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod domain {
    pub const SUPPORT: u64 = 1;
    pub const SIGNS: u64 = 2;
    pub const NOISE_NULL: u64 = 3;
    pub const NOISE_ALT: u64 = 4;
    pub const SCAN_RESTART: u64 = 5;
    pub const SCAN_TRIAL: u64 = 6;
    pub const MGF: u64 = 7;
    pub const PROBE_NULL: u64 = 8;
    pub const PROBE_ALT: u64 = 9;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed; used to nest addresses (e.g. trial inside radius).
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index.rotate_left(17))
}

pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}
