//! Portable seed derivation and shuffling.
//!
//! All randomness in the crate goes through ChaCha8 streams whose 32-byte
//! seed is the SHA-256 digest of a domain tag followed by the caller's
//! parts. Draws use only `next_u64`, so another implementation holding the
//! same ChaCha8 keystream reproduces every value.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub(crate) fn rng_for(tag: &str, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(tag.as_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// First eight bytes (little endian) of SHA-256 over `bytes`.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Uniform in [0, 1) from the top 53 bits of one draw.
pub(crate) fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform in [lo, hi); returns exactly `lo` when the range is empty.
pub(crate) fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    let u = unit_f64(rng);
    lo + (hi - lo) * u
}

/// Fisher-Yates from the back, `j = next_u64() % (i + 1)`.
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_a_permutation_and_repeatable() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b = a.clone();
        shuffle(&mut a, &mut rng_for("t", &[b"x"]));
        shuffle(&mut b, &mut rng_for("t", &[b"x"]));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(a, sorted);
    }

    #[test]
    fn part_boundaries_matter() {
        let x = rng_for("t", &[b"ab", b"c"]).next_u64();
        let y = rng_for("t", &[b"a", b"bc"]).next_u64();
        assert_ne!(x, y);
    }

    #[test]
    fn zero_width_uniform_is_exact() {
        let mut rng = rng_for("t", &[]);
        for _ in 0..100 {
            assert_eq!(uniform(&mut rng, 0.0, 0.0), 0.0);
            assert_eq!(uniform(&mut rng, 1.0, 1.0), 1.0);
        }
    }
}
