//! Reproducible per-worker random streams.
//!
//! Every Monte Carlo worker owns its own generator, seeded from the run's
//! base seed and the worker (path) index. The mixing function is the
//! SplitMix64 finalizer applied to `base + (index + 1) * GOLDEN`, which is
//! a bijection of the 64-bit input, so distinct indices below 2^32 map to
//! distinct seeds for a fixed base.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for worker `index` under `base_seed`. Stable across versions.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Generator used by worker `index`.
pub fn stream_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base_seed, index))
}

/// Derives an independent base seed for a named sub-experiment.
pub fn child_seed(base_seed: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(base_seed ^ 0x5EED), |acc, b| splitmix64(acc ^ u64::from(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn distinct_indices_give_distinct_seeds() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..100_000u64 {
            assert!(seen.insert(derive_seed(42, i)));
        }
    }

    #[test]
    fn seeds_are_bit_stable() {
        // Frozen values; changing the mixing function breaks reproducibility of old runs.
        assert_eq!(splitmix64(0), 0);
        // First output of the reference SplitMix64 generator seeded with 0.
        assert_eq!(derive_seed(0, 0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(derive_seed(1_234_567, 0), 0x599e_d017_fb08_fc85);
    }

    #[test]
    fn avalanche_on_base_seed() {
        let mut rng = stream_rng(99, 0);
        let trials = 10_000;
        let mut flipped = 0u64;
        for _ in 0..trials {
            let base: u64 = rng.random();
            let bit = rng.random_range(0..64);
            let idx: u64 = rng.random_range(0..1 << 32);
            let a = derive_seed(base, idx);
            let b = derive_seed(base ^ (1 << bit), idx);
            flipped += u64::from((a ^ b).count_ones());
        }
        let mean = flipped as f64 / trials as f64;
        assert!(mean >= 20.0, "mean flipped bits {mean}");
    }
}
