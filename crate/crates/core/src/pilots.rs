//! Sounding-reference-signal pilot layouts, noisy pilot observation, and the
//! hold-plus-linear-interpolation estimate used as the network input.

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, GridShape};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Density {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotConfig {
    pub comb: usize,
    pub comb_offset: usize,
    pub num_symbols: usize,
    pub start_symbol: usize,
    pub slot_period: usize,
    pub label: Density,
}

impl PilotConfig {
    /// Comb-2, four contiguous symbols from symbol 10, every slot.
    pub fn dense() -> Self {
        Self {
            comb: 2,
            comb_offset: 0,
            num_symbols: 4,
            start_symbol: 10,
            slot_period: 1,
            label: Density::Dense,
        }
    }

    /// Comb-4, one symbol at symbol 10, every second slot.
    pub fn sparse() -> Self {
        Self {
            comb: 4,
            comb_offset: 0,
            num_symbols: 1,
            start_symbol: 10,
            slot_period: 2,
            label: Density::Sparse,
        }
    }

    pub fn validate(&self, shape: &GridShape) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.comb == 0 || shape.k % self.comb != 0 {
            return bad(format!("comb {} must divide K = {}", self.comb, shape.k));
        }
        if self.comb_offset >= self.comb {
            return bad(format!("comb offset {} must be < comb {}", self.comb_offset, self.comb));
        }
        if self.num_symbols == 0 || self.start_symbol + self.num_symbols > shape.l {
            return bad(format!(
                "pilot symbols {}..{} do not fit a slot of {} symbols",
                self.start_symbol,
                self.start_symbol + self.num_symbols,
                shape.l
            ));
        }
        if self.slot_period == 0 {
            return bad("slot period must be >= 1".into());
        }
        Ok(())
    }

    pub fn pilot_subcarriers(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (self.comb_offset..k).step_by(self.comb)
    }

    pub fn is_active_slot(&self, slot_index: usize) -> bool {
        slot_index % self.slot_period == 0
    }
}

/// Pilot positions over `symbols` consecutive OFDM symbols (one or more slots).
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMask {
    k: usize,
    symbols: usize,
    mask: Vec<bool>,
    positions: Vec<(usize, usize)>,
    pilots: Vec<Complex64>,
}

impl PilotMask {
    /// Mask from explicit `(k, l)` positions with unit pilots.
    pub fn from_positions(k: usize, symbols: usize, mut positions: Vec<(usize, usize)>) -> Result<Self> {
        positions.sort_by_key(|&(kk, l)| (l, kk));
        positions.dedup();
        if let Some(&(kk, l)) = positions.iter().find(|&&(kk, l)| kk >= k || l >= symbols) {
            return Err(Error::InvalidArgument(format!("pilot ({kk}, {l}) outside {k}x{symbols} grid")));
        }
        let mut mask = vec![false; k * symbols];
        for &(kk, l) in &positions {
            mask[l * k + kk] = true;
        }
        let pilots = vec![Complex64::new(1.0, 0.0); positions.len()];
        Ok(Self { k, symbols, mask, positions, pilots })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn contains(&self, k: usize, l: usize) -> bool {
        self.mask[l * self.k + k]
    }

    /// Pilot REs ordered by symbol, then subcarrier.
    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn pilots(&self) -> &[Complex64] {
        &self.pilots
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_pilots(mut self, pilots: Vec<Complex64>) -> Result<Self> {
        if pilots.len() != self.positions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} pilot symbols for {} positions",
                pilots.len(),
                self.positions.len()
            )));
        }
        self.pilots = pilots;
        Ok(self)
    }

    /// Symbols that carry at least one pilot, ascending.
    pub fn pilot_symbols(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.positions.iter().map(|&(_, l)| l).collect();
        v.dedup();
        v
    }

    /// Zeroes every RE outside the mask.
    pub fn apply(&self, grid: &ComplexGrid) -> Result<ComplexGrid> {
        self.check_grid(grid.shape())?;
        let s = grid.shape();
        Ok(ComplexGrid::from_fn(s, |k, l, r, t| {
            if self.contains(k, l) {
                grid.get(k, l, r, t)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    fn check_grid(&self, s: GridShape) -> Result<()> {
        if s.k != self.k || s.l != self.symbols {
            return Err(Error::InvalidArgument(format!(
                "mask {}x{} does not cover grid {s}",
                self.k, self.symbols
            )));
        }
        Ok(())
    }
}

/// Pilot mask of one slot. Empty when the slot is not a sounding slot.
pub fn build_mask(cfg: &PilotConfig, shape: &GridShape, slot_index: usize) -> Result<PilotMask> {
    build_window_mask(cfg, shape, slot_index, 1)
}

/// Pilot mask over `slots` consecutive slots starting at `first_slot`.
pub fn build_window_mask(cfg: &PilotConfig, shape: &GridShape, first_slot: usize, slots: usize) -> Result<PilotMask> {
    cfg.validate(shape)?;
    let mut positions = Vec::new();
    for s in 0..slots {
        if !cfg.is_active_slot(first_slot + s) {
            continue;
        }
        for l in cfg.start_symbol..cfg.start_symbol + cfg.num_symbols {
            for k in cfg.pilot_subcarriers(shape.k) {
                positions.push((k, s * shape.l + l));
            }
        }
    }
    PilotMask::from_positions(shape.k, shape.l * slots, positions)
}

const QPSK: [Complex64; 4] = [
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    Complex64::new(std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

/// Fills the pilot values with seeded unit-modulus QPSK symbols.
pub fn gen_pilot_symbols(mask: PilotMask, seed: u64) -> PilotMask {
    let mut rng = rng::stream(seed, &[tag::PILOTS]);
    let pilots = (0..mask.len()).map(|_| QPSK[rng.random_range(0..4)]).collect();
    PilotMask { pilots, ..mask }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Complex noise variance per RE.
    pub variance: f64,
}

impl NoiseSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!("noise variance must be >= 0, got {variance}")));
        }
        Ok(Self { variance })
    }

    /// Noise for unit-power pilots and channel at the given SNR.
    pub fn from_snr_db(snr_db: f64) -> Self {
        Self { variance: 10f64.powf(-snr_db / 10.0) }
    }
}

/// Values on the pilot REs of every antenna pair, indexed `(rx, tx, pilot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotValues {
    pub n_rx: usize,
    pub n_tx: usize,
    values: Vec<Complex64>,
}

impl PilotValues {
    pub fn new(n_rx: usize, n_tx: usize, values: Vec<Complex64>) -> Self {
        Self { n_rx, n_tx, values }
    }

    pub fn per_pair(&self) -> usize {
        self.values.len() / (self.n_rx * self.n_tx).max(1)
    }

    pub fn pair(&self, r: usize, t: usize) -> &[Complex64] {
        let n = self.per_pair();
        let o = (r * self.n_tx + t) * n;
        &self.values[o..o + n]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
}

/// `Y = H * S + W` on the pilot REs, with `W ~ CN(0, sigma^2)` i.i.d.
pub fn observe(h: &ComplexGrid, mask: &PilotMask, noise: NoiseSpec, seed: u64) -> Result<PilotValues> {
    mask.check_grid(h.shape())?;
    let s = h.shape();
    let mut values = Vec::with_capacity(mask.len() * s.pairs());
    for r in 0..s.n_rx {
        for t in 0..s.n_tx {
            let mut rng = rng::stream(seed, &[tag::NOISE, r as u64, t as u64]);
            for (&(k, l), &p) in mask.positions().iter().zip(mask.pilots()) {
                let mut y = h.get(k, l, r, t) * p;
                if noise.variance > 0.0 {
                    y += rng::complex_gaussian(&mut rng, noise.variance);
                }
                values.push(y);
            }
        }
    }
    Ok(PilotValues::new(s.n_rx, s.n_tx, values))
}

/// Least-squares channel estimate at the pilots: `Y / S`.
pub fn ls_at_pilots(y: &PilotValues, mask: &PilotMask) -> Result<PilotValues> {
    if y.per_pair() != mask.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observations per pair for {} pilots",
            y.per_pair(),
            mask.len()
        )));
    }
    if mask.pilots().iter().any(|p| p.norm_sqr() == 0.0) {
        return Err(Error::InvalidArgument("zero pilot symbol".into()));
    }
    let n = mask.len();
    let values = y
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v / mask.pilots()[i % n.max(1)])
        .collect();
    Ok(PilotValues::new(y.n_rx, y.n_tx, values))
}

/// Piecewise-linear interpolation through `(x_i, v_i)` (x ascending) with
/// nearest-point hold outside the span. Writes one value per `k` in `out`.
pub fn interp_linear_hold(xs: &[usize], vs: &[Complex64], out: &mut [Complex64]) {
    debug_assert_eq!(xs.len(), vs.len());
    debug_assert!(!xs.is_empty());
    let mut seg = 0;
    for (k, o) in out.iter_mut().enumerate() {
        if k <= xs[0] {
            *o = vs[0];
        } else if k >= xs[xs.len() - 1] {
            *o = vs[vs.len() - 1];
        } else {
            while xs[seg + 1] < k {
                seg += 1;
            }
            let (x0, x1) = (xs[seg] as f64, xs[seg + 1] as f64);
            let w = (k as f64 - x0) / (x1 - x0);
            *o = vs[seg] * (1.0 - w) + vs[seg + 1] * w;
        }
    }
}

/// Fills every symbol that has no pilots from the most recent pilot-bearing
/// symbol; symbols before the first pilot symbol copy that first one.
pub fn temporal_hold(grid: &mut ComplexGrid, pilot_symbols: &[usize]) -> Result<()> {
    let first = *pilot_symbols
        .first()
        .ok_or_else(|| Error::InvalidArgument("no pilot-bearing symbol in the window".into()))?;
    let s = grid.shape();
    for r in 0..s.n_rx {
        for t in 0..s.n_tx {
            let mut source = first;
            for l in 0..s.l {
                if pilot_symbols.binary_search(&l).is_ok() {
                    source = l;
                    continue;
                }
                let src = grid.symbol(source, r, t).to_vec();
                grid.symbol_mut(l, r, t).copy_from_slice(&src);
            }
        }
    }
    Ok(())
}

/// Frequency interpolation on every pilot-bearing symbol followed by temporal hold.
///
/// `estimates` holds one value per pilot RE (mask order) per antenna pair;
/// `shape` is the window grid (its `l` equals `mask.symbols()`).
pub fn interp_sparse(estimates: &PilotValues, mask: &PilotMask, shape: GridShape) -> Result<ComplexGrid> {
    mask.check_grid(shape)?;
    if mask.is_empty() {
        return Err(Error::InvalidArgument("window has no pilots to interpolate from".into()));
    }
    if estimates.per_pair() != mask.len() || estimates.n_rx != shape.n_rx || estimates.n_tx != shape.n_tx {
        return Err(Error::InvalidArgument("pilot estimates do not match mask and grid".into()));
    }
    let mut grid = ComplexGrid::zeros(shape);
    let pilot_syms = mask.pilot_symbols();
    for r in 0..shape.n_rx {
        for t in 0..shape.n_tx {
            let vals = estimates.pair(r, t);
            let mut i = 0;
            for &l in &pilot_syms {
                let start = i;
                while i < mask.len() && mask.positions()[i].1 == l {
                    i += 1;
                }
                let xs: Vec<usize> = mask.positions()[start..i].iter().map(|&(k, _)| k).collect();
                interp_linear_hold(&xs, &vals[start..i], grid.symbol_mut(l, r, t));
            }
        }
    }
    temporal_hold(&mut grid, &pilot_syms)?;
    Ok(grid)
}

/// Average fraction of REs per slot spent on pilots, as an exact rational.
pub fn overhead_fraction(cfg: &PilotConfig, shape: &GridShape) -> Result<Ratio<u64>> {
    cfg.validate(shape)?;
    let pilots = (shape.k / cfg.comb) as u64 * cfg.num_symbols as u64;
    let res = (cfg.slot_period * shape.k * shape.l) as u64;
    Ok(Ratio::new(pilots, res))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_shape() -> GridShape {
        GridShape::new(768, 14, 1, 1).unwrap()
    }

    #[test]
    fn dense_mask_counts() {
        let m = build_mask(&PilotConfig::dense(), &table_shape(), 0).unwrap();
        assert_eq!(m.len(), 1536);
        assert!(m.positions().iter().all(|&(k, l)| k % 2 == 0 && (10..14).contains(&l)));
    }

    #[test]
    fn sparse_mask_alternates_slots() {
        let cfg = PilotConfig::sparse();
        assert!(build_mask(&cfg, &table_shape(), 1).unwrap().is_empty());
        let m = build_mask(&cfg, &table_shape(), 2).unwrap();
        assert_eq!(m.len(), 192);
        assert!(m.positions().iter().all(|&(k, l)| l == 10 && k % 4 == 0));
    }

    #[test]
    fn mask_rejects_incompatible_shapes() {
        let cfg = PilotConfig::sparse();
        assert!(build_mask(&cfg, &GridShape::new(48, 8, 1, 1).unwrap(), 0).is_err());
        assert!(build_mask(&cfg, &GridShape::new(50, 14, 1, 1).unwrap(), 0).is_err());
        let bad = PilotConfig { comb_offset: 4, ..cfg };
        assert!(build_mask(&bad, &table_shape(), 0).is_err());
    }

    #[test]
    fn mask_application_is_idempotent() {
        let s = GridShape::new(8, 14, 1, 1).unwrap();
        let m = build_mask(&PilotConfig::sparse(), &s, 0).unwrap();
        let g = ComplexGrid::from_fn(s, |k, l, _, _| Complex64::new(k as f64, l as f64 + 1.0));
        let once = m.apply(&g).unwrap();
        assert_eq!(m.apply(&once).unwrap(), once);
    }

    #[test]
    fn pilot_symbols_unit_power_and_seeded() {
        let m = build_mask(&PilotConfig::dense(), &table_shape(), 0).unwrap();
        let a = gen_pilot_symbols(m.clone(), 4);
        let b = gen_pilot_symbols(m.clone(), 4);
        assert_eq!(a, b);
        assert!(a.pilots().iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        let big = build_window_mask(&PilotConfig::dense(), &table_shape(), 0, 7).unwrap();
        let big = gen_pilot_symbols(big, 9);
        assert!(big.len() >= 10_000);
        let mean: Complex64 = big.pilots().iter().sum::<Complex64>() / big.len() as f64;
        assert!(mean.norm() < 0.03);
    }

    #[test]
    fn noiseless_observation_and_ls() {
        let s = GridShape::new(16, 14, 2, 1).unwrap();
        let h = ComplexGrid::from_fn(s, |k, l, r, _| Complex64::new(k as f64 - r as f64, 0.1 * l as f64));
        let mask = gen_pilot_symbols(build_mask(&PilotConfig::sparse(), &s, 0).unwrap(), 3);
        let y = observe(&h, &mask, NoiseSpec::new(0.0).unwrap(), 1).unwrap();
        assert_eq!(y.per_pair(), mask.len());
        for r in 0..2 {
            for (i, (&(k, l), p)) in mask.positions().iter().zip(mask.pilots()).enumerate() {
                assert_eq!(y.pair(r, 0)[i], h.get(k, l, r, 0) * p);
            }
        }
        let est = ls_at_pilots(&y, &mask).unwrap();
        for r in 0..2 {
            for (i, &(k, l)) in mask.positions().iter().enumerate() {
                assert!((est.pair(r, 0)[i] - h.get(k, l, r, 0)).norm() < 1e-12);
            }
        }
        // Identity pilots: the estimate equals the observation.
        let unit = build_mask(&PilotConfig::sparse(), &s, 0).unwrap();
        let y1 = observe(&h, &unit, NoiseSpec::new(0.0).unwrap(), 1).unwrap();
        assert_eq!(ls_at_pilots(&y1, &unit).unwrap(), y1);
    }

    #[test]
    fn noise_only_power_and_ls_error() {
        let s = GridShape::new(768, 14, 1, 1).unwrap();
        let mask = gen_pilot_symbols(build_window_mask(&PilotConfig::dense(), &s, 0, 7).unwrap(), 8);
        let sigma2 = 0.2;
        let zero = ComplexGrid::zeros(s.with_symbols(14 * 7));
        let y = observe(&zero, &mask, NoiseSpec::new(sigma2).unwrap(), 5).unwrap();
        let p = y.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / y.values().len() as f64;
        assert!((p / sigma2 - 1.0).abs() < 0.05, "{p}");
        let h = ComplexGrid::from_fn(zero.shape(), |k, l, _, _| Complex64::from_polar(1.0, 0.01 * (k + l) as f64));
        let y = observe(&h, &mask, NoiseSpec::new(sigma2).unwrap(), 6).unwrap();
        let est = ls_at_pilots(&y, &mask).unwrap();
        let err = mask
            .positions()
            .iter()
            .zip(est.values())
            .map(|(&(k, l), e)| (e - h.get(k, l, 0, 0)).norm_sqr())
            .sum::<f64>()
            / mask.len() as f64;
        assert!((err / sigma2 - 1.0).abs() < 0.05, "{err}");
    }

    #[test]
    fn linear_interpolation_midpoint() {
        let mut out = vec![Complex64::new(0.0, 0.0); 8];
        interp_linear_hold(&[0, 4], &[Complex64::new(0.0, 0.0), Complex64::new(4.0, 0.0)], &mut out);
        assert_eq!(out[2], Complex64::new(2.0, 0.0));
        assert_eq!(out[7], Complex64::new(4.0, 0.0));
    }

    #[test]
    fn affine_channel_recovered_exactly() {
        let s = GridShape::new(48, 14, 1, 1).unwrap();
        let h = ComplexGrid::from_fn(s, |k, _, _, _| Complex64::new(0.5 + 0.1 * k as f64, -0.03 * k as f64));
        let mask = gen_pilot_symbols(build_mask(&PilotConfig::sparse(), &s, 0).unwrap(), 2);
        let y = observe(&h, &mask, NoiseSpec::new(0.0).unwrap(), 0).unwrap();
        let est = ls_at_pilots(&y, &mask).unwrap();
        let hat = interp_sparse(&est, &mask, s).unwrap();
        // Exact between the first (k = 0) and last (k = 44) comb points on every symbol.
        for l in 0..14 {
            for k in 0..=44 {
                assert!((hat.get(k, l, 0, 0) - h.get(k, l, 0, 0)).norm() < 1e-12, "k={k} l={l}");
            }
        }
    }

    #[test]
    fn hold_spans_two_slot_window() {
        let s = GridShape::new(8, 14, 1, 1).unwrap();
        let mask = build_window_mask(&PilotConfig::sparse(), &s, 0, 2).unwrap();
        assert_eq!(mask.pilot_symbols(), vec![10]);
        let w = s.with_symbols(28);
        let h = ComplexGrid::from_fn(w, |_, l, _, _| Complex64::new(l as f64, 0.0));
        let y = observe(&h, &mask, NoiseSpec::new(0.0).unwrap(), 0).unwrap();
        let hat = interp_sparse(&ls_at_pilots(&y, &mask).unwrap(), &mask, w).unwrap();
        for l in 0..28 {
            assert_eq!(hat.get(3, l, 0, 0), Complex64::new(10.0, 0.0));
        }
    }

    #[test]
    fn hold_uses_most_recent_pilot_symbol() {
        let s = GridShape::new(4, 6, 1, 1).unwrap();
        let mask = PilotMask::from_positions(4, 6, vec![(0, 1), (0, 3)]).unwrap();
        let h = ComplexGrid::from_fn(s, |_, l, _, _| Complex64::new(l as f64, 0.0));
        let y = observe(&h, &mask, NoiseSpec::new(0.0).unwrap(), 0).unwrap();
        let hat = interp_sparse(&y, &mask, s).unwrap();
        let col: Vec<f64> = (0..6).map(|l| hat.get(2, l, 0, 0).re).collect();
        assert_eq!(col, vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn empty_window_rejected() {
        let s = GridShape::new(8, 14, 1, 1).unwrap();
        let mask = build_mask(&PilotConfig::sparse(), &s, 1).unwrap();
        let y = PilotValues::new(1, 1, vec![]);
        assert!(interp_sparse(&y, &mask, s).is_err());
    }

    #[test]
    fn overhead_fractions_are_exact() {
        let s = table_shape();
        let dense = overhead_fraction(&PilotConfig::dense(), &s).unwrap();
        let sparse = overhead_fraction(&PilotConfig::sparse(), &s).unwrap();
        assert_eq!(dense, Ratio::new(2, 14));
        assert_eq!(sparse, Ratio::new(1, 112));
        assert_eq!(dense / sparse, Ratio::from_integer(16));
    }
}
