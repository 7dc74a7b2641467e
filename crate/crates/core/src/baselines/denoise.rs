use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{fro_norm_sq, ComplexGrid};
use crate::rng::{self, tag};

/// Plug-in denoiser for the AMP iteration. `sigma` is the estimated
/// per-entry noise standard deviation of the pseudo-data.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;
    fn denoise(&self, x: &ComplexGrid, sigma: f64) -> ComplexGrid;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Denoiser for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn denoise(&self, x: &ComplexGrid, _sigma: f64) -> ComplexGrid {
        x.clone()
    }
}

/// Fixed linear shrinkage `D(x) = c x`.
#[derive(Debug, Clone, Copy)]
pub struct Shrink(pub f64);

impl Denoiser for Shrink {
    fn name(&self) -> &str {
        "shrink"
    }

    fn denoise(&self, x: &ComplexGrid, _sigma: f64) -> ComplexGrid {
        x.scale(Complex64::new(self.0, 0.0))
    }
}

/// Complex soft thresholding of each symbol's delay-domain profile, with
/// threshold `sigma * sqrt(2 ln K)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftDelay;

impl Denoiser for SoftDelay {
    fn name(&self) -> &str {
        "soft-delay"
    }

    fn denoise(&self, x: &ComplexGrid, sigma: f64) -> ComplexGrid {
        let s = x.shape();
        let mut planner = FftPlanner::<f64>::new();
        let inv = planner.plan_fft_inverse(s.k);
        let fwd = planner.plan_fft_forward(s.k);
        let norm = 1.0 / (s.k as f64).sqrt();
        let thresh = sigma * (2.0 * (s.k as f64).ln()).sqrt();
        let mut out = x.clone();
        let mut buf = vec![Complex64::new(0.0, 0.0); s.k];
        for r in 0..s.n_rx {
            for t in 0..s.n_tx {
                for l in 0..s.l {
                    let sym = out.symbol_mut(l, r, t);
                    if sym.iter().all(|v| v.norm_sqr() == 0.0) {
                        continue;
                    }
                    // H[k] = sum_n h[n] e^{-j 2 pi k n / K}, so the delay profile is the inverse transform.
                    buf.copy_from_slice(sym);
                    inv.process(&mut buf);
                    for v in buf.iter_mut() {
                        let c = *v * norm;
                        let m = c.norm();
                        *v = if m > thresh { c * ((m - thresh) / m) } else { Complex64::new(0.0, 0.0) };
                    }
                    fwd.process(&mut buf);
                    for (o, v) in sym.iter_mut().zip(&buf) {
                        *o = v * norm;
                    }
                }
            }
        }
        out
    }
}

pub const DENOISERS: &[&str] = &["identity", "soft-delay"];

pub fn denoiser_by_name(name: &str) -> Result<Box<dyn Denoiser>> {
    match name {
        "identity" => Ok(Box::new(Identity)),
        "soft-delay" => Ok(Box::new(SoftDelay)),
        _ => Err(Error::UnknownName {
            kind: "denoiser",
            name: name.to_string(),
            known: DENOISERS.join(", "),
        }),
    }
}

/// Monte-Carlo (Hutchinson) estimate of the mean divergence of `d` at `x`,
/// using one random QPSK probe.
pub fn divergence_mc(d: &dyn Denoiser, x: &ComplexGrid, sigma: f64, seed: u64) -> f64 {
    let n = x.values().len();
    if n == 0 {
        return 0.0;
    }
    let rms = (fro_norm_sq(x) / n as f64).sqrt();
    let eps = if rms > 0.0 { 1e-3 * rms } else { 1e-6 };
    let mut r = rng::stream(seed, &[tag::PROBE]);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let probe: Vec<Complex64> = (0..n)
        .map(|_| {
            let re = if r.random::<bool>() { h } else { -h };
            let im = if r.random::<bool>() { h } else { -h };
            Complex64::new(re, im)
        })
        .collect();
    let mut shifted = x.clone();
    for (v, u) in shifted.values_mut().iter_mut().zip(&probe) {
        *v += u * eps;
    }
    let a = d.denoise(&shifted, sigma);
    let b = d.denoise(x, sigma);
    let acc: f64 = probe
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(u, (a, b))| (u.conj() * (a - b)).re)
        .sum();
    acc / (eps * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn random_grid(seed: u64) -> ComplexGrid {
        let mut r = rng::stream(seed, &[]);
        ComplexGrid::from_fn(GridShape::new(16, 3, 1, 1).unwrap(), |_, _, _, _| rng::complex_gaussian(&mut r, 1.0))
    }

    struct Zero;
    impl Denoiser for Zero {
        fn name(&self) -> &str {
            "zero"
        }
        fn denoise(&self, x: &ComplexGrid, _: f64) -> ComplexGrid {
            ComplexGrid::zeros(x.shape())
        }
    }

    #[test]
    fn divergence_of_linear_maps() {
        let x = random_grid(1);
        assert!((divergence_mc(&Identity, &x, 0.1, 3) - 1.0).abs() < 1e-6);
        assert!((divergence_mc(&Shrink(0.5), &x, 0.1, 3) - 0.5).abs() < 1e-6);
        assert_eq!(divergence_mc(&Zero, &x, 0.1, 3), 0.0);
        let zero = ComplexGrid::zeros(x.shape());
        assert!((divergence_mc(&Identity, &zero, 0.1, 3) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn soft_delay_keeps_strong_taps_and_kills_noise() {
        let shape = GridShape::new(32, 1, 1, 1).unwrap();
        // One delay-domain tap of magnitude sqrt(32) at n = 3, frequency response of unit magnitude.
        let h = ComplexGrid::from_fn(shape, |k, _, _, _| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * 3.0 * k as f64 / 32.0));
        let out = SoftDelay.denoise(&h, 0.0);
        for (a, b) in out.values().iter().zip(h.values()) {
            assert!((a - b).norm() < 1e-12);
        }
        let small = h.scale(Complex64::new(1e-3, 0.0));
        let killed = SoftDelay.denoise(&small, 1.0);
        assert!(killed.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn registry_lists_names() {
        for name in DENOISERS {
            assert_eq!(denoiser_by_name(name).unwrap().name(), *name);
        }
        assert!(matches!(denoiser_by_name("cnn"), Err(Error::UnknownName { .. })));
    }
}
