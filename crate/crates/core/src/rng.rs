//! Counter-based seed splitting.
//!
//! Every random stream is addressed by `(master seed, domain, index)`, so the
//! stream an episode sees never depends on how many workers ran or in which
//! order episodes were scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub mod domain {
    pub const TRAIN_EPISODE: u64 = 1;
    pub const EVAL_EPISODE: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const UPSILON: u64 = 5;
    pub const BOUNDS: u64 = 6;
    pub const MONTE_CARLO: u64 = 7;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream `index` within `domain` for a master seed.
pub fn stream(seed: u64, domain: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}
