//! Seed derivation and shuffling.
//!
//! Every random stream in the simulator is a [`ChaCha8Rng`] seeded from a
//! 64-bit value. Per-client, per-round streams are derived with [`mix_seed`]
//! so that client work can run in any order on any number of threads and
//! still produce the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// The SplitMix64 output function.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the RNG seed of client `client` in round `round` from the run seed:
///
/// ```text
/// mix_seed(s, k, r) = splitmix64(splitmix64(splitmix64(s) ^ k) ^ r)
/// ```
pub fn mix_seed(seed: u64, client: u64, round: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ client) ^ round)
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher–Yates shuffle (Durstenfeld variant, walking from the back).
pub fn fisher_yates<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// A seeded uniform permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    fisher_yates(&mut idx, &mut seeded(seed));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0,
        // i.e. splitmix64(0), splitmix64(golden), ...
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn mix_seed_separates_clients_and_rounds() {
        let a = mix_seed(7, 0, 1);
        assert_ne!(a, mix_seed(7, 1, 1));
        assert_ne!(a, mix_seed(7, 0, 2));
        assert_ne!(a, mix_seed(8, 0, 1));
        assert_eq!(a, mix_seed(7, 0, 1));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = permutation(100, 3);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
        assert_eq!(permutation(100, 3), permutation(100, 3));
        assert_ne!(permutation(100, 3), permutation(100, 4));
    }
}
