//! Seeded, counter-based random streams.
//!
//! Every consumer derives its own ChaCha stream from `(seed, stream id)` so
//! adding draws in one subsystem never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids used by the library. Callers may use any other value.
pub mod stream {
    pub const ENV: u64 = 1;
    pub const RANDOMIZATION: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const CALIBRATION: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const REAL_ANALOG: u64 = 9;
}

pub fn seeded(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Mixes an index into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
