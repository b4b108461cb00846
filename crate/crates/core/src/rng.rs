//! Seeded random streams and the few sampling primitives shared across modules.
//!
//! Every stream is a ChaCha8 generator whose seed is derived from an
//! experiment seed plus a tag path, so independent consumers never share
//! draws and results do not depend on scheduling order.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

pub const TAG_AGENT: u64 = 0xA6E7;
pub const TAG_ENV: u64 = 0xE7F1;
pub const TAG_NOISE: u64 = 0x7015;
pub const TAG_WARM: u64 = 0x3A53;
pub const TAG_EVAL: u64 = 0xE7A1;
pub const TAG_TASK: u64 = 0x7A5C;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let g = standard_normal(rng, dim);
        let n = g.norm();
        if n > 1e-300 {
            return g / n;
        }
    }
}

/// Uniform point in the unit ball: a uniform direction scaled by `U^{1/d}`.
pub fn unit_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    let dir = unit_sphere(rng, dim);
    let u: f64 = rng.random();
    dir * u.powf(1.0 / dim as f64)
}
