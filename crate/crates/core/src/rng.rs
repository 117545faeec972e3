//! Keyed random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream addressed by
//! `(root seed, domain, index)`, so any record can be regenerated on its own
//! and parallel generation is order-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct domains never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    TrainChannels = 1,
    TestChannels = 2,
    Oracle = 3,
    Training = 4,
    Finetune = 5,
    Sampling = 6,
    Evaluation = 7,
    Init = 8,
    Misc = 9,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the 64-bit key for `(seed, domain, index)`.
pub fn stream_key(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ index)
}

/// Independent RNG for `(seed, domain, index)`.
pub fn keyed_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, domain, index))
}

/// RNG from a previously derived key.
pub fn rng_from_key(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}
