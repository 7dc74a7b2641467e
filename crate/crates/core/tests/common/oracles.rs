//! Independent reference implementations shared by the test targets.

use std::f64::consts::PI;

use csiforge::baselines::{damp_iterate, DampState, SoftDelay};
use csiforge::channel::{Tap, TapProfile};
use csiforge::grid::{fro_norm_sq, ComplexGrid, GridShape};
use csiforge::pilots::{observe, NoiseSpec, PilotMask};
use csiforge::rng;
use num_complex::Complex64;
use rand::seq::index::sample;

pub fn toy_profile() -> TapProfile {
    TapProfile::new(vec![
        Tap { delay: 0.0, power: 0.6 },
        Tap { delay: 3e-6, power: 0.3 },
        Tap { delay: 7e-6, power: 0.1 },
    ])
    .unwrap()
}

/// Posterior mean by Gauss-Jordan elimination on the augmented system.
pub fn posterior_mean_oracle(r: &[Vec<Complex64>], s: &[Complex64], sigma2: f64, y: &[Complex64]) -> Vec<Complex64> {
    let n = y.len();
    let mut aug: Vec<Vec<Complex64>> = (0..n)
        .map(|i| {
            let mut row: Vec<Complex64> = (0..n)
                .map(|j| s[i] * r[i][j] * s[j].conj() + if i == j { Complex64::new(sigma2, 0.0) } else { Complex64::new(0.0, 0.0) })
                .collect();
            row.push(y[i]);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| aug[a][c].norm().total_cmp(&aug[b][c].norm())).unwrap();
        aug.swap(c, p);
        let piv = aug[c][c];
        for v in aug[c].iter_mut() {
            *v /= piv;
        }
        for i in 0..n {
            if i != c {
                let f = aug[i][c];
                for j in 0..=n {
                    let d = f * aug[c][j];
                    aug[i][j] -= d;
                }
            }
        }
    }
    let w: Vec<Complex64> = (0..n).map(|i| aug[i][n]).collect();
    (0..n)
        .map(|i| (0..n).map(|j| r[i][j] * s[j].conj() * w[j]).sum())
        .collect()
}

pub fn hand_covariance(k: usize, df: f64) -> Vec<Vec<Complex64>> {
    let taps = [(0.6, 0.0), (0.3, 3e-6), (0.1, 7e-6)];
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    taps.iter()
                        .map(|&(p, tau)| Complex64::from_polar(p, -2.0 * PI * (i as f64 - j as f64) * df * tau))
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Channel vectors drawn with the toy prior's statistics.
pub fn draw_channel(k: usize, df: f64, seed: u64) -> ComplexGrid {
    let mut g = rng::stream(seed, &[7]);
    let taps: Vec<(Complex64, f64)> = [(0.6, 0.0), (0.3, 3e-6), (0.1, 7e-6)]
        .iter()
        .map(|&(p, tau)| (rng::complex_gaussian(&mut g, p), tau))
        .collect();
    ComplexGrid::from_fn(GridShape::new(k, 1, 1, 1).unwrap(), |kk, _, _, _| {
        taps.iter()
            .map(|&(a, tau)| a * Complex64::from_polar(1.0, -2.0 * PI * kk as f64 * df * tau))
            .sum()
    })
}

/// NMSE per iteration of AMP on a random-subsampled channel with three on-grid delay taps.
pub fn toy_damp_curve(seed: u64, iters: usize) -> Vec<f64> {
    let k = 64;
    let shape = GridShape::new(k, 1, 1, 1).unwrap();
    let mut g = rng::stream(seed, &[11]);
    let taps: Vec<(usize, Complex64)> = [(0usize, 1.0), (3, 0.5), (9, 0.25)]
        .iter()
        .map(|&(n, p)| (n, rng::complex_gaussian(&mut g, p)))
        .collect();
    let h = ComplexGrid::from_fn(shape, |kk, _, _, _| {
        taps.iter()
            .map(|&(n, a)| a * Complex64::from_polar(1.0, -2.0 * PI * (kk * n) as f64 / k as f64))
            .sum()
    });
    let mut picks: Vec<usize> = sample(&mut g, k, k / 2).into_vec();
    picks.sort();
    let mask = PilotMask::from_positions(k, 1, picks.into_iter().map(|kk| (kk, 0)).collect()).unwrap();
    let sigma2 = 0.01 * fro_norm_sq(&h) / k as f64;
    let y = observe(&h, &mask, NoiseSpec::new(sigma2).unwrap(), seed).unwrap();
    let mut s = DampState::new(shape, &mask).unwrap();
    let mut out = Vec::new();
    for _ in 0..iters {
        s = damp_iterate(&s, &y, &mask, &SoftDelay, sigma2, seed).unwrap();
        out.push(fro_norm_sq(&s.x.sub(&h).unwrap()) / fro_norm_sq(&h));
    }
    out
}
