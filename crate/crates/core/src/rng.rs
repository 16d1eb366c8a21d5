//! Deterministic random-number plumbing.
//!
//! All stochastic code in the crate draws from `ChaCha8Rng` streams whose
//! seeds are derived from a single master seed plus a list of integer
//! tags. Deriving rather than sharing streams keeps results independent
//! of evaluation order, so parallel loops produce bit-identical output
//! to their sequential counterparts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer: a fast, well-mixed 64-bit permutation.
fn mix(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

/// Derives a child seed from `master` and a sequence of `tags`.
///
/// Distinct tag sequences give statistically independent child seeds,
/// and the derivation is associative-free: `derive_seed(m, &[a, b])`
/// differs from `derive_seed(derive_seed(m, &[a]), &[b])` only in that
/// both are equally usable; callers should pick one convention per call
/// site and stick to it.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut h = mix(master.wrapping_add(GOLDEN_GAMMA));
    for &t in tags {
        h = mix(h ^ mix(t.wrapping_add(GOLDEN_GAMMA)));
    }
    h
}

/// A fresh `ChaCha8Rng` stream for the given master seed and tags.
pub fn stream(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Samples an index from an unnormalized nonnegative weight row by
/// inverse CDF. The row must have positive total mass.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    debug_assert!(!weights.is_empty());
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "categorical row must have positive mass");
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Floating-point slack: fall back to the last index with positive weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}
