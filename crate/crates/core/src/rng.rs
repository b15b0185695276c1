//! Seed derivation helpers.
//!
//! Every stochastic routine takes a `u64` seed. Independent sub-streams are
//! derived with [`substream`], so results never depend on how work is split
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `seed` and `salt` into a new 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for sub-stream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
