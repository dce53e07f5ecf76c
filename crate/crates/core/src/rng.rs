//! Seed derivation.
//!
//! Every random choice in a run derives from one run seed through named
//! sub-seeds (`"split"`, `"init"`, `"shuffle"`, `"crop"`, `"window"`, ...), so any
//! stage can be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for the stage `label`, further keyed by `indices`
/// (split number, epoch, clip position, ...).
pub fn derive(seed: u64, label: &str, indices: &[u64]) -> u64 {
    // FNV-1a over the label, then mixed with the seed and each index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = splitmix64(seed ^ splitmix64(h));
    for &i in indices {
        z = splitmix64(z ^ splitmix64(i.wrapping_add(0x5851_f42d_4c95_7f2d)));
    }
    z
}
