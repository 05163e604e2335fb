//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a
//! `(seed, stream)` pair, so trajectory `i` of a dataset is the same no matter
//! which worker generates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from `(parent, tag)`.
pub fn mix_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
