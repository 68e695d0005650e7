//! Named, independent random streams derived from a base seed.
//!
//! Weight init, shuffling, augmentation and data generation each draw from their own
//! stream, so consuming one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for the stream `(seed, domain, indices...)`.
pub fn derive_seed(seed: u64, domain: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ fnv1a(domain));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i));
    }
    h
}

pub fn stream(seed: u64, domain: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, domain, indices))
}
