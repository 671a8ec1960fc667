//! Counter-based seeding: realization `k` of a run with master seed `s`
//! reads ChaCha8 stream `k` keyed by `s`, so results do not depend on
//! execution order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for realization `k` under `master_seed`.
pub fn stream(master_seed: u64, k: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(master_seed);
    r.set_stream(k);
    r
}

/// Derived master seed for an auxiliary purpose (directions, subsampling).
pub fn derive(master_seed: u64, tag: u64) -> u64 {
    let mut z = master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
