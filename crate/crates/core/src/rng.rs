//! Seed schedule shared by every random draw in the crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable child seed: `splitmix64(seed + (index + 1) * 0x9e3779b97f4a7c15)`.
///
/// Used for per-basis components, per-realization streams and the named
/// streams of a run. The formula is part of the output contract; changing it
/// changes every generated sequence.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let a = sub_seed(42, 0);
        let b = sub_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, sub_seed(42, 0));
        assert_ne!(sub_seed(43, 0), a);
    }

    #[test]
    fn splitmix_reference_value() {
        // first output of the reference SplitMix64 generator seeded with 0
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0xe220_a839_7b1d_cdaf);
    }
}
