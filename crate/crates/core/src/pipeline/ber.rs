//! Uncoded QPSK link over the estimated grids: Gray mapping, per-RE
//! zero-forcing with the estimate, hard decisions.
//!
//! Draws depend on (seed, pass, link) but not on SNR, so every SNR point and
//! every estimator sees the same bits and the same unit noise, which makes
//! comparisons across estimators paired.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use super::parallel_map;
use crate::error::{Error, Result};
use crate::grid::{db_to_linear, ComplexGrid};
use crate::pilots::PilotMask;
use crate::rng::{complex_gaussian, stream, tag};

/// Smallest bit budget accepted per SNR point.
pub const MIN_BITS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BerSpec {
    /// Link SNR points (Es/N0 in dB, unit-energy symbols).
    pub snr_db: Vec<f64>,
    /// Lower bound on simulated bits per SNR point.
    pub min_bits: u64,
    pub seed: u64,
}

/// One channel slice and its estimate. Pilot REs, if given, carry no data.
#[derive(Debug, Clone, Copy)]
pub struct BerLink<'a> {
    pub truth: &'a ComplexGrid,
    pub estimate: &'a ComplexGrid,
    pub pilots: Option<&'a PilotMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    /// Bit errors; erasures count half a bit each, hence fractional.
    pub errors: f64,
    pub ber: f64,
    /// Binomial standard error of `ber`.
    pub std_err: f64,
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn data_res(link: &BerLink) -> Vec<usize> {
    let s = link.truth.shape();
    (0..s.len())
        .filter(|&i| {
            let (k, l) = (i % s.k, (i / s.k) % s.l);
            !link.pilots.is_some_and(|m| m.contains(k, l))
        })
        .collect()
}

/// Errors per SNR point for one link over one pass.
fn run_link(link: &BerLink, res: &[usize], sigmas: &[f64], seed: u64) -> Vec<f64> {
    let mut r = stream(seed, &[]);
    let (h, hh) = (link.truth.values(), link.estimate.values());
    let mut errors = vec![0.0; sigmas.len()];
    let a = std::f64::consts::FRAC_1_SQRT_2;
    for &i in res {
        let (b0, b1) = (r.random::<bool>(), r.random::<bool>());
        let x = Complex64::new(if b0 { -a } else { a }, if b1 { -a } else { a });
        let n = complex_gaussian(&mut r, 1.0);
        if hh[i] == Complex64::new(0.0, 0.0) {
            for e in errors.iter_mut() {
                *e += 1.0;
            }
            continue;
        }
        let hx = h[i] * x;
        for (e, &sigma) in errors.iter_mut().zip(sigmas) {
            let z = (hx + n * sigma) / hh[i];
            *e += ((z.re < 0.0) != b0) as u8 as f64 + ((z.im < 0.0) != b1) as u8 as f64;
        }
    }
    errors
}

/// Simulates every link at every SNR point, repeating passes over the links
/// until at least `spec.min_bits` bits have been sent.
pub fn ber_link_sim(links: &[BerLink], spec: &BerSpec, threads: usize) -> Result<Vec<BerPoint>> {
    if spec.min_bits < MIN_BITS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_BITS} bits, got {}", spec.min_bits)));
    }
    if spec.snr_db.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("SNR points must be finite".into()));
    }
    for l in links {
        crate::grid::ensure_same_shape(l.truth, l.estimate)?;
        if !l.estimate.is_finite() {
            return Err(Error::Numerical("channel estimate has non-finite entries".into()));
        }
    }
    let res: Vec<Vec<usize>> = links.iter().map(data_res).collect();
    let per_pass: u64 = res.iter().map(|r| 2 * r.len() as u64).sum();
    if per_pass == 0 {
        return Err(Error::InvalidArgument("no data resource elements to simulate".into()));
    }
    let passes = spec.min_bits.div_ceil(per_pass);
    let sigmas: Vec<f64> = spec.snr_db.iter().map(|&s| (1.0 / db_to_linear(s)).sqrt()).collect();
    let jobs = passes as usize * links.len();
    let counts = parallel_map(jobs, threads, |j| {
        let (p, i) = (j / links.len(), j % links.len());
        Ok(run_link(&links[i], &res[i], &sigmas, crate::rng::derive_seed(spec.seed, &[tag::BER, p as u64, i as u64])))
    })?;
    let bits = passes * per_pass;
    Ok(spec
        .snr_db
        .iter()
        .enumerate()
        .map(|(s, &snr_db)| {
            let errors: f64 = counts.iter().map(|c| c[s]).sum();
            let ber = errors / bits as f64;
            BerPoint { snr_db, bits, errors, ber, std_err: (ber * (1.0 - ber) / bits as f64).sqrt() }
        })
        .collect())
}
