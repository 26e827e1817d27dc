//! Seeded randomness. Every consumer receives its own generator; nothing is global.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

/// 64-bit-state splittable generator used throughout the crate.
pub type Rng = SplitMix64;

pub fn seeded(seed: u64) -> Rng {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent child seed for a named stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the stream label, then one splitmix finalizer round
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, name: &str) -> Rng {
    seeded(derive_seed(seed, name))
}
