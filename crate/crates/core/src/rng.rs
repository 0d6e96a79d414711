//! Deterministic RNG substreams.
//!
//! Every stochastic component draws from a stream keyed by a base seed
//! plus structural tags (stay index, feature index, epoch, ...), so
//! results are reproducible and independent of iteration order, and so
//! a larger configuration nests a smaller one exactly (the stream for
//! feature j never depends on how many other features exist).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag path into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Independent stream for the given tag path.
pub fn substream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: f64 = substream(7, &[1, 2]).random();
        let b: f64 = substream(7, &[1, 2]).random();
        let c: f64 = substream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tag_order_matters() {
        assert_ne!(derive_seed(0, &[1, 0]), derive_seed(0, &[0, 1]));
    }
}
