//! Seeded random streams. All randomness in the crate flows through
//! [`Stream`] so that every run is a pure function of its seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a parent seed, a tag and an index.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(parent ^ h).wrapping_add(index))
}

pub fn derive(parent: u64, tag: &str, index: u64) -> Stream {
    stream(derive_seed(parent, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, "train", 0);
        assert_eq!(a, derive_seed(1, "train", 0));
        assert_ne!(a, derive_seed(1, "test", 0));
        assert_ne!(a, derive_seed(1, "train", 1));
        assert_ne!(a, derive_seed(2, "train", 0));
    }
}
