//! Seed derivation. Every worker draws from its own ChaCha stream keyed by
//! `(seed, stream)` so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed for a named purpose so that independent phases of a
/// run (generation, training, evaluation) never share a stream.
pub fn derive(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(mix(seed), |acc, b| mix(acc ^ u64::from(b)))
}

/// Hashes a sequence of item ids together with a seed.
pub fn hash_items(seed: u64, items: &[u32]) -> u64 {
    let mut h = mix(seed ^ items.len() as u64);
    for &i in items {
        h = mix(h ^ u64::from(i));
    }
    h
}
