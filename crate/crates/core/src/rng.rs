//! Seeded random streams.
//!
//! Every random quantity in the crate comes from xoshiro256++ seeded through
//! SplitMix64 (`rand_xoshiro`'s `seed_from_u64`). Independent per-item streams
//! are derived from `(seed, index)` so that parallel work stays
//! reproducible regardless of scheduling.

use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family identified by `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    // odd multiplier keeps distinct indices distinct after the xor
    Rng::seed_from_u64(seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform sample in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
