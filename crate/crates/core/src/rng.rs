//! Seeded random streams and the few distributions the crate draws from.
//!
//! Normal variates use the Box–Muller transform on ChaCha8 uniforms so that
//! synthetic data can be regenerated bit-for-bit from a seed by any
//! implementation that follows the same recipe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StdRng = ChaCha8Rng;

/// Generator for `seed` on an independent `stream`.
pub fn seeded(seed: u64, stream: u64) -> StdRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform on the open interval (0, 1): `(k + 0.5) / 2^53` for a 53-bit `k`.
pub fn uniform_open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let k = rng.next_u64() >> 11;
    (k as f64 + 0.5) / (1u64 << 53) as f64
}

/// One standard normal variate: `sqrt(-2 ln u1) · cos(2π u2)`.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = uniform_open01(rng);
    let u2 = uniform_open01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard Gumbel variate `-ln(-ln u)`.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(-uniform_open01(rng).ln()).ln()
}
