//! Composite training loss: a phase-invariant reconstruction error plus
//! correlation and smoothness terms, with analytic gradients.
//!
//! Gradients are returned as grids `dL/dRe + j dL/dIm` with respect to the
//! estimate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, fro_norm_sq, inner_product, ComplexGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimaryLoss {
    SpNmse,
    Nmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub lambda_t: f64,
    pub lambda_f: f64,
    pub primary: PrimaryLoss,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta: 0.05, gamma: 0.1, lambda_t: 1.0, lambda_f: 1.0, primary: PrimaryLoss::SpNmse }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("lambda_t", self.lambda_t), ("lambda_f", self.lambda_f)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub pri: f64,
    pub smooth: f64,
    pub corr: f64,
    pub alpha_star: Complex64,
}

fn reference_energy(target: &ComplexGrid) -> Result<f64> {
    let e = fro_norm_sq(target);
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::ZeroReference)
    }
}

/// `|est - target|^2 / |target|^2`.
pub fn nmse(est: &ComplexGrid, target: &ComplexGrid) -> Result<f64> {
    ensure_same_shape(est, target)?;
    let e = reference_energy(target)?;
    Ok(fro_norm_sq(&est.sub(target)?) / e)
}

pub fn nmse_grad(est: &ComplexGrid, target: &ComplexGrid) -> Result<(f64, ComplexGrid)> {
    let loss = nmse(est, target)?;
    let e = reference_energy(target)?;
    let g = est.sub(target)?.scale(Complex64::new(2.0 / e, 0.0));
    Ok((loss, g))
}

/// `|est - a target|^2 / |target|^2` with the optimal complex scale
/// `a = <est, target> / |target|^2`. Returns the loss and `a`.
pub fn sp_nmse(est: &ComplexGrid, target: &ComplexGrid) -> Result<(f64, Complex64)> {
    ensure_same_shape(est, target)?;
    let e = reference_energy(target)?;
    let alpha = inner_product(est, target)? / e;
    let resid: f64 = est
        .values()
        .iter()
        .zip(target.values())
        .map(|(x, h)| (x - alpha * h).norm_sqr())
        .sum();
    Ok((resid / e, alpha))
}

pub fn sp_nmse_grad(est: &ComplexGrid, target: &ComplexGrid) -> Result<(f64, Complex64, ComplexGrid)> {
    let (loss, alpha) = sp_nmse(est, target)?;
    let e = reference_energy(target)?;
    // The scale is optimal, so only the explicit dependence on `est` remains.
    let g = ComplexGrid::from_vec(
        est.shape(),
        est.values()
            .iter()
            .zip(target.values())
            .map(|(x, h)| (x - alpha * h) * (2.0 / e))
            .collect(),
    )?;
    Ok((loss, alpha, g))
}

/// `1 - |<est, target>| / (|est| |target|)`.
pub fn corr_loss(est: &ComplexGrid, target: &ComplexGrid) -> Result<f64> {
    ensure_same_shape(est, target)?;
    let (ex, eh) = (fro_norm_sq(est), reference_energy(target)?);
    if ex == 0.0 {
        return Err(Error::ZeroReference);
    }
    let c = inner_product(est, target)?;
    Ok((1.0 - c.norm() / (ex.sqrt() * eh.sqrt())).clamp(0.0, 1.0))
}

pub fn corr_loss_grad(est: &ComplexGrid, target: &ComplexGrid) -> Result<(f64, ComplexGrid)> {
    let loss = corr_loss(est, target)?;
    let (nx, nh) = (fro_norm_sq(est).sqrt(), fro_norm_sq(target).sqrt());
    let c = inner_product(est, target)?;
    let cm = c.norm();
    let phase = if cm > 0.0 { c / cm } else { Complex64::new(1.0, 0.0) };
    let denom = nx * nh;
    let g = ComplexGrid::from_vec(
        est.shape(),
        est.values()
            .iter()
            .zip(target.values())
            .map(|(x, h)| -(phase * h - x * (cm / (nx * nx))) / denom)
            .collect(),
    )?;
    Ok((loss, g))
}

/// Weighted squared forward differences of the estimate along time and frequency.
pub fn smooth_loss(est: &ComplexGrid, weights: &LossWeights) -> f64 {
    smooth_loss_grad(est, weights).0
}

pub fn smooth_loss_grad(est: &ComplexGrid, weights: &LossWeights) -> (f64, ComplexGrid) {
    let s = est.shape();
    let mut loss = 0.0;
    let mut g = ComplexGrid::zeros(s);
    for r in 0..s.n_rx {
        for t in 0..s.n_tx {
            for l in 0..s.l {
                for k in 0..s.k {
                    let x = est.get(k, l, r, t);
                    if weights.lambda_f > 0.0 && k + 1 < s.k {
                        let d = est.get(k + 1, l, r, t) - x;
                        loss += weights.lambda_f * d.norm_sqr();
                        let w = d * (2.0 * weights.lambda_f);
                        g.set(k + 1, l, r, t, g.get(k + 1, l, r, t) + w);
                        g.set(k, l, r, t, g.get(k, l, r, t) - w);
                    }
                    if weights.lambda_t > 0.0 && l + 1 < s.l {
                        let d = est.get(k, l + 1, r, t) - x;
                        loss += weights.lambda_t * d.norm_sqr();
                        let w = d * (2.0 * weights.lambda_t);
                        g.set(k, l + 1, r, t, g.get(k, l + 1, r, t) + w);
                        g.set(k, l, r, t, g.get(k, l, r, t) - w);
                    }
                }
            }
        }
    }
    (loss, g)
}

/// `pri + beta smooth + gamma corr`. The correlation term is skipped (zero)
/// when its weight is zero, so an all-zero estimate is allowed then.
pub fn total_loss(est: &ComplexGrid, target: &ComplexGrid, weights: &LossWeights) -> Result<LossBreakdown> {
    Ok(total_loss_grad(est, target, weights)?.0)
}

pub fn total_loss_grad(est: &ComplexGrid, target: &ComplexGrid, weights: &LossWeights) -> Result<(LossBreakdown, ComplexGrid)> {
    weights.validate()?;
    let (pri, alpha_star, mut g) = match weights.primary {
        PrimaryLoss::SpNmse => sp_nmse_grad(est, target)?,
        PrimaryLoss::Nmse => {
            let (l, g) = nmse_grad(est, target)?;
            (l, sp_nmse(est, target)?.1, g)
        }
    };
    let (smooth, gs) = smooth_loss_grad(est, weights);
    for (a, b) in g.values_mut().iter_mut().zip(gs.values()) {
        *a += b * weights.beta;
    }
    let corr = if weights.gamma > 0.0 {
        let (c, gc) = corr_loss_grad(est, target)?;
        for (a, b) in g.values_mut().iter_mut().zip(gc.values()) {
            *a += b * weights.gamma;
        }
        c
    } else {
        0.0
    };
    let total = pri + weights.beta * smooth + weights.gamma * corr;
    Ok((LossBreakdown { total, pri, smooth, corr, alpha_star }, g))
}
