//! Classical reference estimators: LMMSE with hold and interpolation, the
//! denoising AMP iteration, and the genie oracle.

mod damp;
mod denoise;

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::channel::TapProfile;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::linalg;
use crate::pilots::{self, PilotMask, PilotValues};

pub use damp::{damp_estimate, damp_iterate, DampConfig, DampState, DampTrace};
pub use denoise::{denoiser_by_name, divergence_mc, Denoiser, Identity, Shrink, SoftDelay, DENOISERS};

/// Frequency-domain channel covariance over a set of pilot subcarriers.
#[derive(Debug, Clone)]
pub struct ChannelPrior {
    pub r_hh: Array2<Complex64>,
    pub subcarriers: Vec<usize>,
    pub noise_variance: f64,
}

/// `R_hh[i,j] = sum_p sigma_p^2 exp(-j 2 pi (k_i - k_j) df tau_p)`.
///
/// Only zero time lag enters, so the Doppler spectrum does not appear here.
pub fn build_prior(profile: &TapProfile, subcarrier_spacing: f64, subcarriers: &[usize], noise_variance: f64) -> Result<ChannelPrior> {
    if subcarriers.is_empty() {
        return Err(Error::InvalidArgument("prior needs at least one pilot subcarrier".into()));
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {noise_variance}")));
    }
    let n = subcarriers.len();
    let r_hh = Array2::from_shape_fn((n, n), |(i, j)| {
        let dk = subcarriers[i] as f64 - subcarriers[j] as f64;
        profile
            .taps()
            .iter()
            .map(|tap| Complex64::from_polar(tap.power, -2.0 * PI * dk * subcarrier_spacing * tap.delay))
            .sum()
    });
    Ok(ChannelPrior { r_hh, subcarriers: subcarriers.to_vec(), noise_variance })
}

/// LMMSE on each pilot-bearing symbol, `h = R_hh S^H (S R_hh S^H + sigma^2 I)^-1 y`,
/// then frequency interpolation and temporal hold as for the LS input.
pub fn lmmse_estimate(y: &PilotValues, mask: &PilotMask, prior: &ChannelPrior, shape: GridShape) -> Result<ComplexGrid> {
    if y.per_pair() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observations per pair for {} pilots",
            y.per_pair(),
            mask.len()
        )));
    }
    let n = prior.subcarriers.len();
    let positions = mask.positions();
    let mut runs = Vec::new();
    let mut i = 0;
    while i < positions.len() {
        let l = positions[i].1;
        let start = i;
        while i < positions.len() && positions[i].1 == l {
            i += 1;
        }
        let ks: Vec<usize> = positions[start..i].iter().map(|&(k, _)| k).collect();
        if ks != prior.subcarriers {
            return Err(Error::InvalidArgument(format!(
                "pilot symbol {l} uses subcarriers that differ from the prior's {n}"
            )));
        }
        runs.push(start..i);
    }

    let mut estimates = Vec::with_capacity(y.values().len());
    for r in 0..y.n_rx {
        for t in 0..y.n_tx {
            let obs = y.pair(r, t);
            for run in &runs {
                let s = &mask.pilots()[run.clone()];
                // R_yy = S R S^H + sigma^2 I
                let mut r_yy = Array2::from_shape_fn((n, n), |(a, b)| s[a] * prior.r_hh[[a, b]] * s[b].conj());
                for d in 0..n {
                    r_yy[[d, d]] += prior.noise_variance;
                }
                let factor = linalg::factor_hpd(&r_yy, prior.noise_variance > 0.0).map_err(|e| match e {
                    Error::Singular(msg) => Error::Singular(format!(
                        "R_yy is singular ({msg}); use a noise variance floor sigma^2 > 0"
                    )),
                    other => other,
                })?;
                let w = linalg::cholesky_solve(&factor, &obs[run.clone()]);
                // R_hy = R S^H
                let sw: Vec<Complex64> = w.iter().zip(s).map(|(w, s)| s.conj() * w).collect();
                estimates.extend(linalg::matvec(&prior.r_hh, &sw));
            }
        }
    }
    pilots::interp_sparse(&PilotValues::new(y.n_rx, y.n_tx, estimates), mask, shape)
}

/// The oracle estimator: the true channel itself.
pub fn genie_oracle(h: &ComplexGrid) -> ComplexGrid {
    h.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Tap, TapProfile};
    use crate::rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn three_tap() -> TapProfile {
        TapProfile::new(vec![
            Tap { delay: 0.0, power: 0.5 },
            Tap { delay: 1e-6, power: 0.3 },
            Tap { delay: 2.5e-6, power: 0.2 },
        ])
        .unwrap()
    }

    #[test]
    fn single_tap_at_zero_gives_all_ones() {
        let p = TapProfile::single(0.0).unwrap();
        let prior = build_prior(&p, 15e3, &[0, 4, 8], 0.1).unwrap();
        assert!(prior.r_hh.iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn prior_matches_hand_sum() {
        let p = three_tap();
        let df = 30e3;
        let prior = build_prior(&p, df, &[1, 3], 0.0).unwrap();
        let mut want01 = c(0.0, 0.0);
        for (pow, tau) in [(0.5, 0.0), (0.3, 1e-6), (0.2, 2.5e-6)] {
            // k_i - k_j = 1 - 3 = -2
            want01 += c(0.0, 2.0 * PI * 2.0 * df * tau).exp() * pow;
        }
        assert!((prior.r_hh[[0, 1]] - want01).norm() < 1e-12);
        assert!((prior.r_hh[[1, 0]] - want01.conj()).norm() < 1e-12);
        assert!((prior.r_hh[[0, 0]] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn scalar_lmmse_shrinks() {
        let p = TapProfile::single(0.0).unwrap();
        let sigma2 = 0.25;
        let prior = build_prior(&p, 15e3, &[0], sigma2).unwrap();
        let mask = PilotMask::from_positions(1, 1, vec![(0, 0)]).unwrap();
        let y = PilotValues::new(1, 1, vec![c(1.0, -2.0)]);
        let h = lmmse_estimate(&y, &mask, &prior, GridShape::new(1, 1, 1, 1).unwrap()).unwrap();
        assert!((h.values()[0] - c(1.0, -2.0) / (1.0 + sigma2)).norm() < 1e-14);
    }

    #[test]
    fn tiny_noise_approaches_ls() {
        // Well-separated taps give a well-conditioned prior on four subcarriers.
        let k = 4;
        let df = 1.0;
        let profile = TapProfile::new((0..4).map(|i| Tap { delay: i as f64 / (k as f64 * df), power: 1.0 }).collect()).unwrap();
        let prior = build_prior(&profile, df, &[0, 1, 2, 3], 1e-12).unwrap();
        let mask = PilotMask::from_positions(k, 1, (0..k).map(|kk| (kk, 0)).collect()).unwrap();
        let mut r = rng::stream(4, &[]);
        let y: Vec<Complex64> = (0..k).map(|_| rng::complex_gaussian(&mut r, 1.0)).collect();
        let h = lmmse_estimate(&PilotValues::new(1, 1, y.clone()), &mask, &prior, GridShape::new(k, 1, 1, 1).unwrap()).unwrap();
        for (a, b) in h.values().iter().zip(&y) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn singular_without_noise_is_rejected() {
        let p = TapProfile::single(0.0).unwrap();
        let prior = build_prior(&p, 15e3, &[0, 1, 2], 0.0).unwrap();
        let mask = PilotMask::from_positions(3, 1, vec![(0, 0), (1, 0), (2, 0)]).unwrap();
        let y = PilotValues::new(1, 1, vec![c(1.0, 0.0); 3]);
        let err = lmmse_estimate(&y, &mask, &prior, GridShape::new(3, 1, 1, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("floor")), "{err}");
    }

    #[test]
    fn mismatched_prior_is_rejected() {
        let prior = build_prior(&three_tap(), 15e3, &[0, 2], 0.1).unwrap();
        let mask = PilotMask::from_positions(4, 1, vec![(0, 0), (1, 0)]).unwrap();
        let y = PilotValues::new(1, 1, vec![c(1.0, 0.0); 2]);
        assert!(lmmse_estimate(&y, &mask, &prior, GridShape::new(4, 1, 1, 1).unwrap()).is_err());
    }

    #[test]
    fn genie_is_a_copy() {
        let h = ComplexGrid::from_elem(GridShape::new(2, 2, 1, 1).unwrap(), c(1.0, 1.0));
        let mut g = genie_oracle(&h);
        g.set(0, 0, 0, 0, c(0.0, 0.0));
        assert_eq!(h.get(0, 0, 0, 0), c(1.0, 1.0));
    }
}
