//! Seed derivation. A master seed is split into independent streams by
//! hashing the master together with a path of stream identifiers, so any
//! realization or tap can be regenerated without replaying earlier draws.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a stream path.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &id| splitmix64(acc ^ splitmix64(id)))
}

pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stream-path tags, kept distinct so different consumers never share a stream.
pub mod tag {
    pub const TAPS: u64 = 1;
    pub const SNR: u64 = 2;
    pub const PILOTS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const REALIZATION: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SHUFFLE: u64 = 8;
    pub const BER: u64 = 9;
    pub const PROBE: u64 = 10;
}

/// Circularly-symmetric complex Gaussian with `E|w|^2 = variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
