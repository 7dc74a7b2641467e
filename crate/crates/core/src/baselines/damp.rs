use num_complex::Complex64;

use super::denoise::{divergence_mc, Denoiser};
use crate::error::{Error, Result};
use crate::grid::{fro_norm_sq, ComplexGrid, GridShape};
use crate::pilots::{self, PilotMask, PilotValues};
use crate::rng::derive_seed;

/// Iterate of the denoising AMP recursion. The sensing operator is the pilot
/// mask times the pilot symbols, scaled by `1/sqrt(delta)` so its columns have
/// unit average energy; its adjoint zero-fills. Observations are scaled to match.
#[derive(Debug, Clone)]
pub struct DampState {
    pub x: ComplexGrid,
    /// Residual in (scaled) observation space, one value per pilot per antenna pair.
    pub z: Vec<Complex64>,
    /// Sampling ratio `|Omega| / (K L)`.
    pub delta: f64,
    /// Mean divergence of the last denoising step (zero before the first).
    pub divergence: f64,
    pub t: usize,
}

impl DampState {
    pub fn new(shape: GridShape, mask: &PilotMask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::InvalidArgument("AMP needs at least one observation".into()));
        }
        let delta = mask.len() as f64 / (shape.k * shape.l) as f64;
        Ok(Self {
            x: ComplexGrid::zeros(shape),
            z: vec![Complex64::new(0.0, 0.0); mask.len() * shape.pairs()],
            delta,
            divergence: 0.0,
            t: 0,
        })
    }
}

fn forward(x: &ComplexGrid, mask: &PilotMask, gain: f64) -> Vec<Complex64> {
    let s = x.shape();
    let mut out = Vec::with_capacity(mask.len() * s.pairs());
    for r in 0..s.n_rx {
        for t in 0..s.n_tx {
            out.extend(mask.positions().iter().zip(mask.pilots()).map(|(&(k, l), p)| x.get(k, l, r, t) * p * gain));
        }
    }
    out
}

fn adjoint_add(x: &mut ComplexGrid, z: &[Complex64], mask: &PilotMask, gain: f64) {
    let s = x.shape();
    let m = mask.len();
    for r in 0..s.n_rx {
        for t in 0..s.n_tx {
            let zp = &z[(r * s.n_tx + t) * m..][..m];
            for ((&(k, l), p), v) in mask.positions().iter().zip(mask.pilots()).zip(zp) {
                let cur = x.get(k, l, r, t);
                x.set(k, l, r, t, cur + p.conj() * v * gain);
            }
        }
    }
}

/// One AMP step:
/// `z = y - A x + (1/delta) z_prev <D'>`, then `x = D(x + A^H z)`.
///
/// The denoiser's noise level is `sqrt(max(|z|^2 / m, sigma2 / delta))`.
pub fn damp_iterate(
    state: &DampState,
    y: &PilotValues,
    mask: &PilotMask,
    denoiser: &dyn Denoiser,
    sigma2: f64,
    seed: u64,
) -> Result<DampState> {
    let shape = state.x.shape();
    if !(state.delta > 0.0) {
        return Err(Error::InvalidArgument("sampling ratio must be positive".into()));
    }
    if y.values().len() != state.z.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observations for a residual of length {}",
            y.values().len(),
            state.z.len()
        )));
    }
    let gain = state.delta.sqrt().recip();
    let ax = forward(&state.x, mask, gain);
    let onsager = state.divergence / state.delta;
    let z: Vec<Complex64> = y
        .values()
        .iter()
        .zip(&ax)
        .zip(&state.z)
        .map(|((y, a), zp)| y * gain - a + zp * onsager)
        .collect();
    let m = z.len() as f64;
    let floor = sigma2.max(0.0) / state.delta;
    let sigma = (z.iter().map(|v| v.norm_sqr()).sum::<f64>() / m).max(floor).sqrt();
    let mut pseudo = state.x.clone();
    adjoint_add(&mut pseudo, &z, mask, gain);
    let x = denoiser.denoise(&pseudo, sigma);
    let divergence = divergence_mc(denoiser, &pseudo, sigma, derive_seed(seed, &[state.t as u64]));
    if !x.is_finite() || !divergence.is_finite() || z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical(format!("AMP iterate {} became non-finite", state.t + 1)));
    }
    debug_assert_eq!(x.shape(), shape);
    Ok(DampState { x, z, delta: state.delta, divergence, t: state.t + 1 })
}

#[derive(Debug, Clone, Copy)]
pub struct DampConfig {
    pub max_iters: usize,
    /// Stop once `|x_{t+1} - x_t| / |x_t|` falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for DampConfig {
    fn default() -> Self {
        Self { max_iters: 10, tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct DampTrace {
    pub iterations: usize,
    /// `|x_t|^2` after each iteration, for diagnostics.
    pub energies: Vec<f64>,
}

/// Runs the AMP recursion from zero on the pilot-bearing symbols of the
/// window, then fills the remaining symbols by temporal hold. Symbols without
/// pilots contribute only unobserved columns, so they are left out of the
/// sampling ratio.
///
/// Besides the relative-change rule the loop also stops once the residual
/// `y - A x` vanishes, since no further progress is possible.
pub fn damp_estimate(
    y: &PilotValues,
    mask: &PilotMask,
    shape: GridShape,
    denoiser: &dyn Denoiser,
    sigma2: f64,
    cfg: &DampConfig,
) -> Result<(ComplexGrid, DampTrace)> {
    if mask.k() != shape.k || mask.symbols() != shape.l {
        return Err(Error::InvalidArgument(format!(
            "mask {}x{} does not cover grid {shape}",
            mask.k(),
            mask.symbols()
        )));
    }
    let syms = mask.pilot_symbols();
    let sub_shape = shape.with_symbols(syms.len().max(1));
    let sub_positions = mask
        .positions()
        .iter()
        .map(|&(k, l)| (k, syms.binary_search(&l).unwrap_or(0)))
        .collect();
    let sub_mask = PilotMask::from_positions(shape.k, sub_shape.l, sub_positions)?.with_pilots(mask.pilots().to_vec())?;

    let mut state = DampState::new(sub_shape, &sub_mask)?;
    let y_energy: f64 = y.values().iter().map(|v| v.norm_sqr()).sum();
    let mut energies = Vec::new();
    for _ in 0..cfg.max_iters {
        let next = damp_iterate(&state, y, &sub_mask, denoiser, sigma2, cfg.seed)?;
        let prev_norm = fro_norm_sq(&state.x);
        let change = fro_norm_sq(&next.x.sub(&state.x)?);
        energies.push(fro_norm_sq(&next.x));
        state = next;
        let resid: f64 = forward(&state.x, &sub_mask, 1.0)
            .iter()
            .zip(y.values())
            .map(|(a, y)| (y - a).norm_sqr())
            .sum();
        if resid <= 1e-24 * y_energy.max(f64::MIN_POSITIVE) {
            break;
        }
        if prev_norm > 0.0 && change.sqrt() < cfg.tol * prev_norm.sqrt() {
            break;
        }
    }
    let mut x = ComplexGrid::zeros(shape);
    for r in 0..shape.n_rx {
        for t in 0..shape.n_tx {
            for (i, &l) in syms.iter().enumerate() {
                x.symbol_mut(l, r, t).copy_from_slice(state.x.symbol(i, r, t));
            }
        }
    }
    pilots::temporal_hold(&mut x, &syms)?;
    Ok((x, DampTrace { iterations: energies.len(), energies }))
}
