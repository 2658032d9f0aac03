//! Seeded random sub-streams.
//!
//! All randomness in a run flows from one user seed. Each consumer draws from
//! a named sub-stream so that enabling one stochastic feature (jitter, mixing,
//! shuffling) never perturbs the draws seen by another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a hash of a stream name. std's hasher is not guaranteed
/// stable across releases, and stream identity must survive toolchain bumps.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for the sub-stream `name` of the run seed.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}
