//! Seedable, splittable randomness.
//!
//! Every random draw in the crate goes through [`LabRng`]. Child streams are
//! derived from a parent seed plus a label, so independent work items (one
//! stimulus, one dataset object, one training run) get stable streams that do
//! not depend on evaluation order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes; stable across platforms and releases.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed and a textual label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(label_hash(label)))
}

/// Derive a child seed from a parent seed and an integer index.
pub fn derive_seed_index(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed).wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn derived(seed: u64, label: &str) -> LabRng {
    seeded(derive_seed(seed, label))
}

/// Split off an independent child generator, advancing the parent.
pub fn split(rng: &mut LabRng) -> LabRng {
    seeded(rng.next_u64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..8).map({
            let mut r = seeded(9);
            move |_| r.gen()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = seeded(9);
            move |_| r.gen()
        }).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(5, "train"), derive_seed(5, "train"));
        assert_ne!(derive_seed_index(5, 0), derive_seed_index(5, 1));
    }
}
