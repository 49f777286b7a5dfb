//! Seeded random streams.
//!
//! Every stochastic component takes a caller-owned [`StreamRng`]. Independent
//! streams are derived from a base seed and a stream id so that parallel work
//! (per video, per seed) never shares state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Base stream for a seed.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`.
pub fn derive(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit FNV-1a hash, used to turn string ids into stream ids.
pub fn stream_id(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
