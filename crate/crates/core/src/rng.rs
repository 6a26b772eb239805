//! Seeded randomness. Every random stream in the crate is a ChaCha8 generator
//! derived from one top-level seed plus a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed for a named stream (splitmix64 over the
/// parent seed and an FNV-1a hash of the label).
pub fn split_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, label: &str) -> LabRng {
    from_seed(split_seed(seed, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_give_distinct_streams() {
        assert_ne!(split_seed(7, "env"), split_seed(7, "train"));
        assert_eq!(split_seed(7, "env"), split_seed(7, "env"));
    }
}
