//! Training-based achievable rate under imperfect CSI and the rate gain from
//! spending fewer resource elements on pilots.

use std::f64::consts::LN_2;
use std::io::Write;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Coherence block length in resource elements.
    pub t_c: f64,
    /// Per-RE SNR, linear.
    pub rho: f64,
    /// Pilot fraction.
    pub alpha: f64,
}

impl RateParams {
    pub fn new(t_c: f64, rho: f64, alpha: f64) -> Result<Self> {
        let p = Self { t_c, rho, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_c >= 1.0) || !self.t_c.is_finite() {
            return Err(Error::InvalidArgument(format!("coherence length must be >= 1, got {}", self.t_c)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!("SNR must be >= 0, got {}", self.rho)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("pilot fraction must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Channel-estimation error variance with `alpha * T_c` pilot REs.
pub fn sigma_e2(p: &RateParams) -> f64 {
    1.0 / (1.0 + p.rho * p.alpha * p.t_c)
}

/// Effective SNR when the estimation error is treated as extra Gaussian noise.
pub fn rho_eff_from(rho: f64, sigma_e2: f64) -> f64 {
    rho * (1.0 - sigma_e2) / (1.0 + rho * sigma_e2)
}

pub fn rho_eff(p: &RateParams) -> f64 {
    rho_eff_from(p.rho, sigma_e2(p))
}

/// `e^z E1(z)` for `z > 0`.
pub fn exp_e1(z: f64) -> f64 {
    debug_assert!(z > 0.0);
    if z <= 1.0 {
        // E1(z) = -gamma - ln z - sum_{k>=1} (-z)^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            let kf = k as f64;
            term *= -z / kf;
            let add = term / kf;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        (-EULER_GAMMA - z.ln() - sum) * z.exp()
    } else {
        // e^z E1(z) = 1/(z+1- 1/(z+3- 4/(z+5- ...))), modified Lentz.
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let delta = c * d;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// `g(x) = E[log2(1 + x |h|^2)]` for `|h|^2 ~ Exp(1)`, via `e^{1/x} E1(1/x) / ln 2`.
pub fn ergodic_rate_term(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    exp_e1(1.0 / x) / LN_2
}

/// Monte-Carlo estimate of `g(x)`: `(mean, standard error)`.
pub fn ergodic_rate_term_mc(x: f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed, &[tag::PROBE, 0x9a7e]);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let g: f64 = r.sample(Exp1);
        let v = (1.0 + x * g).log2();
        s += v;
        s2 += v * v;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// `(1 - alpha) g(rho_eff)`.
pub fn rate_at(alpha: f64, rho_eff: f64) -> f64 {
    (1.0 - alpha) * ergodic_rate_term(rho_eff)
}

pub fn rate(p: &RateParams) -> f64 {
    rate_at(p.alpha, rho_eff(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainReport {
    /// `R(alpha1) - R(alpha0)`.
    pub gain: f64,
    /// `(alpha0 - alpha1) g(rho_eff(alpha1))`.
    pub overhead_term: f64,
    /// `(alpha0 - alpha1) log2(1 + rho_eff(alpha1))`.
    pub bound: f64,
    pub rho_eff0: f64,
    pub rho_eff1: f64,
    /// Whether `rho_eff(alpha1) >= rho_eff(alpha0)`.
    pub hypothesis_holds: bool,
}

/// Rate gain of the sparser configuration `p1` over `p0`.
///
/// `rho_eff1` replaces the effective SNR of `p1`, which emulates reliable
/// reconstruction when set to `rho_eff(p0)`. Equal pilot fractions are
/// accepted and give zero overhead gain.
pub fn gain_lower_bound(p0: &RateParams, p1: &RateParams, rho_eff1: Option<f64>) -> Result<GainReport> {
    p0.validate()?;
    p1.validate()?;
    if p1.alpha > p0.alpha {
        return Err(Error::InvalidArgument(format!(
            "reduced pilot fraction {} exceeds the reference {}",
            p1.alpha, p0.alpha
        )));
    }
    let r0 = rho_eff(p0);
    let r1 = rho_eff1.unwrap_or_else(|| rho_eff(p1));
    if !(r1 >= 0.0) {
        return Err(Error::InvalidArgument(format!("effective SNR must be >= 0, got {r1}")));
    }
    let da = p0.alpha - p1.alpha;
    Ok(GainReport {
        gain: rate_at(p1.alpha, r1) - rate_at(p0.alpha, r0),
        overhead_term: da * ergodic_rate_term(r1),
        bound: da * (1.0 + r1).log2(),
        rho_eff0: r0,
        rho_eff1: r1,
        hypothesis_holds: r1 >= r0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub sigma_e2: f64,
    pub rho_eff: f64,
    pub rate: f64,
}

pub fn sweep(t_c: f64, rho: f64, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let p = RateParams::new(t_c, rho, alpha)?;
            Ok(SweepRow { alpha, sigma_e2: sigma_e2(&p), rho_eff: rho_eff(&p), rate: rate(&p) })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "alpha,sigma_e2,rho_eff,rate_bits_per_re")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.alpha, r.sigma_e2, r.rho_eff, r.rate)?;
    }
    Ok(())
}
