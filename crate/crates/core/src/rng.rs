//! Seed streams.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`], which produces the
//! same output on every platform. Independent streams (one per replica) are
//! derived from a base seed by XOR-ing in a stream id and passing the result
//! through the SplitMix64 finalizer:
//!
//! ```text
//! stream_seed(base, id) = splitmix64(base ^ id)
//! ```
//!
//! Sweeps use `id = (lambda_index << 32) | replica`, see [`replica_stream_id`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 output function (Steele, Lea, Flood 2014).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(base_seed: u64, stream_id: u64) -> u64 {
    splitmix64(base_seed ^ stream_id)
}

pub fn replica_stream_id(lambda_index: usize, replica: usize) -> u64 {
    ((lambda_index as u64) << 32) | (replica as u64 & 0xFFFF_FFFF)
}

pub fn stream(base_seed: u64, stream_id: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(base_seed, stream_id))
}

pub fn from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
