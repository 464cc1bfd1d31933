//! Reproducible per-replication random streams.
//!
//! Replication `k` under master seed `s` draws from a ChaCha8 generator
//! seeded with `splitmix64(s ^ splitmix64(k + 0x9E37_79B9_7F4A_7C15))`. The
//! stream depends only on `(s, k)`, never on which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, index))
}
