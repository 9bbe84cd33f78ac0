//! Seed derivation for independent deterministic RNG streams.
//!
//! Training and querying draw randomness for several unrelated purposes
//! (parameter init, batch shuffling, perturbations, dropout, ...). Each
//! purpose gets its own stream derived from one base seed so that skipping
//! one consumer (e.g. the self-training branch when `lambda_st = 0`) does
//! not shift the draws seen by any other consumer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates derived seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from `base` and a stream tag.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Seeded RNG on a named stream.
pub fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}
