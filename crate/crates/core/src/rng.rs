//! Seed splitting. Every random stream in a run derives from one user seed, so
//! results never depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(splitmix(a) ^ b.rotate_left(17))
}

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Episode = 1,
    Shuffle = 2,
    Init = 3,
    Eval = 4,
    Baseline = 5,
    Misc = 6,
}

/// Deterministic child seed for `(seed, stream, a, b)`.
pub fn derive(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    mix(mix(mix(seed, stream as u64), a), b)
}

pub fn rng_for(seed: u64, stream: Stream, a: u64, b: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, a, b))
}
