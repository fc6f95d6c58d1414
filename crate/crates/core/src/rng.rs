//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), a
//! counter-based generator. A `(seed, stream)` pair selects an independent
//! keystream: the seed is expanded with `SeedableRng::seed_from_u64` and the
//! stream id is written into ChaCha's 64-bit nonce via `set_stream`. Normal
//! variates use `rand_distr::StandardNormal` (ziggurat). Identical
//! `(seed, stream)` pairs reproduce identical draws on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

/// Uniform draw in `[0, 1)`.
pub fn uniform(rng: &mut Rng) -> f64 {
    rand_distr::StandardUniform.sample(rng)
}

/// Mixes a stream label with an index so per-run and per-step streams never collide.
pub const fn substream(label: u64, index: u64) -> u64 {
    (label << 40) ^ index
}
