//! Time-varying tapped-delay-line channels rendered onto the resource grid.
//!
//! Each tap of each antenna pair is an independent sum-of-sinusoids process
//! whose autocorrelation converges to `sigma_p^2 * J0(2 pi f_D dt)`. The
//! frequency response at subcarrier `k` and symbol `l` is
//! `H[k, l] = sum_p alpha_p[l] * exp(-j 2 pi k df tau_p)`.

mod bessel;
mod profile;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use bessel::bessel_j0;
pub use profile::{make_tdlc_profile, parse_tap_table, Tap, TapProfile, TDL_C};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::rng::{self, tag};

pub const DEFAULT_SINUSOIDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerSpec {
    pub max_doppler: f64,
    /// Per-tap Doppler; `None` means every tap uses `max_doppler`.
    pub per_tap: Option<Vec<f64>>,
    pub num_sinusoids: usize,
}

impl DopplerSpec {
    pub fn new(max_doppler: f64) -> Self {
        Self {
            max_doppler,
            per_tap: None,
            num_sinusoids: DEFAULT_SINUSOIDS,
        }
    }

    pub fn tap_doppler(&self, p: usize) -> f64 {
        self.per_tap.as_ref().map_or(self.max_doppler, |v| v[p])
    }

    pub fn validate(&self, taps: usize) -> Result<()> {
        if !(self.max_doppler >= 0.0) || !self.max_doppler.is_finite() {
            return Err(Error::InvalidArgument(format!("max Doppler must be >= 0, got {}", self.max_doppler)));
        }
        if self.num_sinusoids == 0 {
            return Err(Error::InvalidArgument("need at least one sinusoid".into()));
        }
        if let Some(v) = &self.per_tap {
            if v.len() != taps {
                return Err(Error::InvalidArgument(format!(
                    "per-tap Doppler has {} entries for {taps} taps",
                    v.len()
                )));
            }
            if v.iter().any(|&f| !(0.0..=self.max_doppler).contains(&f)) {
                return Err(Error::InvalidArgument("per-tap Doppler must lie in [0, max_doppler]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Grid of one slot.
    pub shape: GridShape,
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    pub profile: TapProfile,
    pub doppler: DopplerSpec,
    pub nominal_snr_db: f64,
    pub shadowing_std_db: f64,
}

impl ChannelConfig {
    /// TDL-C channel with symbol duration `1 / df` and no shadowing.
    pub fn tdlc(shape: GridShape, subcarrier_spacing: f64, tau_rms: f64, max_doppler: f64, snr_db: f64) -> Result<Self> {
        let cfg = Self {
            shape,
            subcarrier_spacing,
            symbol_duration: 1.0 / subcarrier_spacing,
            profile: make_tdlc_profile(tau_rms)?,
            doppler: DopplerSpec::new(max_doppler),
            nominal_snr_db: snr_db,
            shadowing_std_db: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale default: 4 resource blocks, 14 symbols, one antenna pair,
    /// 15 kHz spacing, TDL-C 251 ns, 50 Hz Doppler, 15 dB.
    pub fn desk_default() -> Self {
        Self::tdlc(GridShape { k: 48, l: 14, n_rx: 1, n_tx: 1 }, 15e3, 251e-9, 50.0, 15.0)
            .expect("default channel config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.subcarrier_spacing > 0.0) {
            return Err(Error::InvalidArgument("subcarrier spacing must be positive".into()));
        }
        if !(self.symbol_duration > 0.0) {
            return Err(Error::InvalidArgument("symbol duration must be positive".into()));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(Error::InvalidArgument("shadowing std must be >= 0".into()));
        }
        self.doppler.validate(self.profile.len())
    }
}

/// Complex tap gains indexed `(tap, rx, tx, symbol)`, symbol fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TapGains {
    pub taps: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub symbols: usize,
    values: Vec<Complex64>,
}

impl TapGains {
    fn offset(&self, p: usize, r: usize, t: usize) -> usize {
        ((p * self.n_rx + r) * self.n_tx + t) * self.symbols
    }

    pub fn series(&self, p: usize, r: usize, t: usize) -> &[Complex64] {
        let o = self.offset(p, r, t);
        &self.values[o..o + self.symbols]
    }
}

/// Sum-of-sinusoids fading for every `(tap, rx, tx)`, sampled every `dt` seconds.
#[allow(clippy::too_many_arguments)]
pub fn gen_tap_gains(
    profile: &TapProfile,
    doppler: &DopplerSpec,
    n_rx: usize,
    n_tx: usize,
    symbols: usize,
    dt: f64,
    seed: u64,
) -> Result<TapGains> {
    if symbols == 0 {
        return Err(Error::InvalidArgument("need at least one symbol".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("sampling interval must be positive".into()));
    }
    doppler.validate(profile.len())?;
    let n = doppler.num_sinusoids;
    let amp_norm = 1.0 / (n as f64).sqrt();
    let mut values = Vec::with_capacity(profile.len() * n_rx * n_tx * symbols);
    let mut omega = vec![0.0; n];
    let mut phase = vec![0.0; n];
    for (p, tap) in profile.taps().iter().enumerate() {
        let fd = doppler.tap_doppler(p);
        let amp = tap.power.sqrt() * amp_norm;
        for r in 0..n_rx {
            for t in 0..n_tx {
                let mut rng = rng::stream(seed, &[tag::TAPS, p as u64, r as u64, t as u64]);
                for i in 0..n {
                    let theta: f64 = rng.random_range(0.0..2.0 * PI);
                    omega[i] = 2.0 * PI * fd * theta.cos() * dt;
                    phase[i] = rng.random_range(0.0..2.0 * PI);
                }
                for l in 0..symbols {
                    let lf = l as f64;
                    let s: Complex64 = omega
                        .iter()
                        .zip(&phase)
                        .map(|(&w, &ph)| Complex64::from_polar(1.0, w * lf + ph))
                        .sum();
                    values.push(s * amp);
                }
            }
        }
    }
    Ok(TapGains { taps: profile.len(), n_rx, n_tx, symbols, values })
}

/// Renders tap gains onto a `K x symbols x nRx x nTx` grid.
pub fn taps_to_grid(gains: &TapGains, profile: &TapProfile, k: usize, subcarrier_spacing: f64) -> Result<ComplexGrid> {
    if gains.taps != profile.len() {
        return Err(Error::InvalidArgument(format!(
            "gains cover {} taps but the profile has {}",
            gains.taps,
            profile.len()
        )));
    }
    let shape = GridShape::new(k, gains.symbols, gains.n_rx, gains.n_tx)?;
    // phasor[p][k] = exp(-j 2 pi k df tau_p)
    let phasors: Vec<Vec<Complex64>> = profile
        .taps()
        .iter()
        .map(|tap| {
            (0..k)
                .map(|kk| Complex64::from_polar(1.0, -2.0 * PI * kk as f64 * subcarrier_spacing * tap.delay))
                .collect()
        })
        .collect();
    let mut grid = ComplexGrid::zeros(shape);
    for r in 0..gains.n_rx {
        for t in 0..gains.n_tx {
            for (p, ph) in phasors.iter().enumerate() {
                let series = gains.series(p, r, t);
                for (l, &a) in series.iter().enumerate() {
                    for (h, &e) in grid.symbol_mut(l, r, t).iter_mut().zip(ph) {
                        *h += a * e;
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Nominal SNR plus a log-normal shadowing draw.
pub fn draw_effective_snr(config: &ChannelConfig, seed: u64) -> Result<f64> {
    if !(config.shadowing_std_db >= 0.0) {
        return Err(Error::InvalidArgument("shadowing std must be >= 0".into()));
    }
    if config.shadowing_std_db == 0.0 {
        return Ok(config.nominal_snr_db);
    }
    let mut rng = rng::stream(seed, &[tag::SNR]);
    let z: f64 = rng.sample(StandardNormal);
    Ok(config.nominal_snr_db + config.shadowing_std_db * z)
}

/// One slot of channel for every antenna pair.
pub fn gen_realization(config: &ChannelConfig, seed: u64) -> Result<ComplexGrid> {
    gen_window(config, 1, seed)
}

/// `slots` consecutive slots (`slots * L` symbols) sharing one fading trajectory.
pub fn gen_window(config: &ChannelConfig, slots: usize, seed: u64) -> Result<ComplexGrid> {
    config.validate()?;
    let s = config.shape;
    let gains = gen_tap_gains(
        &config.profile,
        &config.doppler,
        s.n_rx,
        s.n_tx,
        s.l * slots,
        config.symbol_duration,
        seed,
    )?;
    taps_to_grid(&gains, &config.profile, s.k, config.subcarrier_spacing)
}
