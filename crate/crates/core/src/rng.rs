//! Deterministic named random streams split from a single root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent stages that consume randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    InitData = 1,
    Mle = 2,
    Paths = 3,
    Spsa = 4,
    Noise = 5,
    Direction = 6,
}

/// A generator for `stream` under `root`; `index` separates repeated uses of
/// the same stage (e.g. successive active-learning updates).
pub fn stream_rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}

/// Derives a child seed, used where an API takes a plain integer seed.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
