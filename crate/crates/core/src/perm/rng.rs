//! Seeded random streams and uniform permutations.
//!
//! Every consumer draws from a ChaCha8 stream keyed by `(seed, label)` and selected by
//! an index, so the value produced for replicate `r` (or dataset `r`) depends only on
//! the seed and `r`, never on scheduling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dyad::Permutation;

/// Identifier stored in reports so a run can be reproduced bit-for-bit.
pub const RNG_ALGORITHM: &str = "chacha8/splitmix64-key/stream-per-index/lemire-fisher-yates v1";

/// Disjoint stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamLabel {
    /// Synthetic data generation.
    Data,
    /// Permutation replicates.
    Perm,
}

impl StreamLabel {
    fn tag(self) -> u64 {
        match self {
            StreamLabel::Data => 0x6461_7461_0000_0001,
            StreamLabel::Perm => 0x7065_726d_0000_0002,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `index` of family `label` under `seed`.
pub fn stream_rng(seed: u64, label: StreamLabel, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ label.tag();
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform integer in `0..bound` (Lemire's multiply-and-reject).
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let mut m = (rng.next_u64() as u128) * (bound as u128);
    if (m as u64) < bound {
        let threshold = bound.wrapping_neg() % bound;
        while (m as u64) < threshold {
            m = (rng.next_u64() as u128) * (bound as u128);
        }
    }
    (m >> 64) as u64
}

/// Uniform double in `[0, 1)` with 53 random bits.
pub fn uniform01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn fisher_yates<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Uniform draw from the `n!` permutations of `0..n`.
pub fn random_permutation<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut image: Vec<usize> = (0..n).collect();
    fisher_yates(rng, &mut image);
    Permutation::from_vec_unchecked(image)
}

/// The permutation used by replicate `r` of a Monte Carlo run seeded with `seed`.
pub fn replicate_permutation(seed: u64, replicate: u64, n: usize) -> Permutation {
    random_permutation(n, &mut stream_rng(seed, StreamLabel::Perm, replicate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn trivial_sizes() {
        let mut rng = stream_rng(1, StreamLabel::Perm, 0);
        assert_eq!(random_permutation(1, &mut rng).as_slice(), &[0]);
        assert!(random_permutation(0, &mut rng).is_empty());
    }

    #[test]
    fn reproducible_and_distinct_streams() {
        let a: Vec<u64> = (0..5).map(|r| stream_rng(7, StreamLabel::Perm, r).next_u64()).collect();
        let b: Vec<u64> = (0..5).map(|r| stream_rng(7, StreamLabel::Perm, r).next_u64()).collect();
        assert_eq!(a, b);
        let data = stream_rng(7, StreamLabel::Data, 0).next_u64();
        assert_ne!(a[0], data);
        assert_ne!(a[0], a[1]);
        assert_eq!(replicate_permutation(3, 11, 9), replicate_permutation(3, 11, 9));
    }

    #[test]
    fn uniform_over_s3() {
        // chi-square goodness of fit over the 6 permutations of 3 items
        let draws = 60_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut rng = stream_rng(2024, StreamLabel::Perm, 0);
        for _ in 0..draws {
            *counts.entry(random_permutation(3, &mut rng).as_slice().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 5 degrees of freedom
        assert!(chi2 < 20.52, "chi2 = {chi2}");
        for &c in counts.values() {
            assert!((c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn bounded_integers_cover_range() {
        let mut rng = stream_rng(5, StreamLabel::Data, 3);
        let mut seen = [0usize; 7];
        for _ in 0..7000 {
            seen[uniform_below(&mut rng, 7) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850 && c < 1150));
        let u = uniform01(&mut rng);
        assert!((0.0..1.0).contains(&u));
    }
}
