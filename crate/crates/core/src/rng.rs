//! Seeded randomness. Every stochastic component draws from a named stream so
//! that data, attack, victim and text-backend randomness can be varied
//! independently while staying reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit hash of a stream name (FNV-1a).
fn stream_tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for a `(base seed, stream name)` pair.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    // splitmix-style finalizer keeps nearby seeds decorrelated
    let mut z = seed ^ stream_tag(name);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Deterministic per-token RNG, independent of the order tokens are seen in.
pub fn token_stream(seed: u64, token: &str) -> ChaCha8Rng {
    stream(seed ^ stream_tag(token), "token")
}

/// Derived 64-bit seed for handing to a component that seeds itself.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    use rand::Rng;
    stream(seed, name).gen()
}
