//! Deterministic seed derivation.
//!
//! Every random decision in a simulation is driven by a stream seeded from
//! `(master seed, domain tag, indices...)`. Results are therefore bit-identical
//! across runs and independent of scheduling or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 finalizer; full-period, well-mixed 64-bit permutation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from a master seed and a list of domain/index words.
pub fn derive(master: u64, words: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &w in words {
        state = splitmix64(state ^ splitmix64(w));
    }
    state
}

/// The crate-wide deterministic RNG. ChaCha12's output stream is stable across
/// platforms and library versions, unlike `StdRng`.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_word_sensitive() {
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1, 2]), derive(8, &[1, 2]));
        assert_ne!(derive(7, &[1]), derive(7, &[1, 0]));
    }

    #[test]
    fn rng_streams_differ_across_seeds() {
        use rand::Rng;
        let a: u64 = rng(1).gen();
        let b: u64 = rng(2).gen();
        assert_ne!(a, b);
    }
}
