//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, keys...)`, so the values a sample
//! receives never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Samples per stream block when a flat index range is partitioned.
pub const BLOCK: usize = 256;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha stream keyed by `seed` and a path of integer keys.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for k in keys {
        h = splitmix(h ^ splitmix(*k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.set_stream(keys.last().copied().unwrap_or(0));
    rng
}

/// Fill `out` with standard normals from the given stream.
pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
