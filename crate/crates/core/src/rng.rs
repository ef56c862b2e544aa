//! Seeded random streams.
//!
//! Every stochastic component takes an explicit generator. Independent
//! streams are derived from `(seed, tag, index)` so that parallel or
//! reordered work reproduces bit-identical draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c64, CVec, C64};

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, tag, index)`.
pub fn substream(seed: u64, tag: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(index);
    rng
}

/// Circularly-symmetric complex Gaussian scalar with total variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(s * re, s * im)
}

pub fn complex_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, var: f64) -> CVec {
    CVec::from_fn(n, |_, _| complex_normal(rng, var))
}

pub mod tags {
    pub const CHANNEL: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const CONSTELLATION: u64 = 3;
    pub const PRECODER: u64 = 4;
    pub const GMM: u64 = 5;
    pub const INIT: u64 = 6;
    pub const NOISE: u64 = 7;
}
