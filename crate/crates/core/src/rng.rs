//! Seed derivation for reproducible, order-independent random streams.
//!
//! Every random stream is a `Xoshiro256PlusPlus` generator seeded (through
//! SplitMix64) from a 64-bit key derived from `(seed, stream tag, index)`.
//! Deriving keys instead of sharing one generator means day 7's batch is
//! the same whether the simulation runs 10 days or 60.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

/// Stream tags used by the simulation and evaluation code.
pub mod stream {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0001;
    pub const IN_POOL: u64 = 0x696e_706f_6f6c_0002;
    pub const OOD_POOL: u64 = 0x6f6f_6470_6f6f_0003;
    pub const DAY: u64 = 0x6461_7900_0000_0004;
    pub const BOOTSTRAP: u64 = 0x626f_6f74_0000_0005;
    pub const TEST: u64 = 0x7465_7374_0000_0006;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the key for item `index` of stream `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let a = mix64(seed.wrapping_add(GOLDEN));
    let b = mix64(a ^ tag.wrapping_mul(GOLDEN));
    mix64(b ^ index.wrapping_add(1).wrapping_mul(GOLDEN))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn derived(seed: u64, tag: u64, index: u64) -> SimRng {
    seeded(derive_seed(seed, tag, index))
}
