//! Complex resource-grid container and the small amount of algebra the rest
//! of the crate needs.
//!
//! Values are stored in `(rx, tx, symbol, subcarrier)` order with the
//! subcarrier index fastest. File formats depend on this order.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a resource grid: subcarriers, symbols, receive and transmit antennas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub k: usize,
    pub l: usize,
    pub n_rx: usize,
    pub n_tx: usize,
}

impl GridShape {
    pub fn new(k: usize, l: usize, n_rx: usize, n_tx: usize) -> Result<Self> {
        if k == 0 || l == 0 || n_rx == 0 || n_tx == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be >= 1, got K={k} L={l} nRx={n_rx} nTx={n_tx}"
            )));
        }
        Ok(Self { k, l, n_rx, n_tx })
    }

    /// Grid with `K = 12 * n_rb` subcarriers.
    pub fn from_resource_blocks(n_rb: usize, l: usize, n_rx: usize, n_tx: usize) -> Result<Self> {
        Self::new(12 * n_rb, l, n_rx, n_tx)
    }

    /// A single antenna-pair slice of `k x l`.
    pub fn slice(k: usize, l: usize) -> Result<Self> {
        Self::new(k, l, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.k * self.l * self.n_rx * self.n_tx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn res_per_pair(&self) -> usize {
        self.k * self.l
    }

    pub fn pairs(&self) -> usize {
        self.n_rx * self.n_tx
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, r: usize, t: usize) -> usize {
        debug_assert!(k < self.k && l < self.l && r < self.n_rx && t < self.n_tx);
        ((r * self.n_tx + t) * self.l + l) * self.k + k
    }

    pub fn with_symbols(&self, l: usize) -> Self {
        Self { l, ..*self }
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.k, self.l, self.n_rx, self.n_tx)
    }
}

/// Complex-valued `K x L x nRx x nTx` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    shape: GridShape,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_elem(shape: GridShape, value: Complex64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: GridShape, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "grid {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite grid entry at flat index {i}")));
        }
        Ok(Self { shape, values })
    }

    /// Builds a grid from `f(k, l, r, t)`.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(usize, usize, usize, usize) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for r in 0..shape.n_rx {
            for t in 0..shape.n_tx {
                for l in 0..shape.l {
                    for k in 0..shape.k {
                        values.push(f(k, l, r, t));
                    }
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, r: usize, t: usize) -> Complex64 {
        self.values[self.shape.index(k, l, r, t)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, r: usize, t: usize, v: Complex64) {
        let i = self.shape.index(k, l, r, t);
        self.values[i] = v;
    }

    /// Copies out the `K x L` slice of one antenna pair.
    pub fn pair(&self, r: usize, t: usize) -> ComplexGrid {
        let n = self.shape.res_per_pair();
        let start = (r * self.shape.n_tx + t) * n;
        ComplexGrid {
            shape: GridShape { n_rx: 1, n_tx: 1, ..self.shape },
            values: self.values[start..start + n].to_vec(),
        }
    }

    /// Copies symbols `start..start + count` of every antenna pair.
    pub fn symbols(&self, start: usize, count: usize) -> Result<ComplexGrid> {
        if start + count > self.shape.l || count == 0 {
            return Err(Error::InvalidArgument(format!(
                "symbol range {start}..{} outside grid with L={}",
                start + count,
                self.shape.l
            )));
        }
        let shape = self.shape.with_symbols(count);
        Ok(ComplexGrid::from_fn(shape, |k, l, r, t| self.get(k, start + l, r, t)))
    }

    /// Symbol vector `H[.., l, r, t]` as a contiguous slice.
    pub fn symbol(&self, l: usize, r: usize, t: usize) -> &[Complex64] {
        let start = self.shape.index(0, l, r, t);
        &self.values[start..start + self.shape.k]
    }

    pub fn symbol_mut(&mut self, l: usize, r: usize, t: usize) -> &mut [Complex64] {
        let start = self.shape.index(0, l, r, t);
        let k = self.shape.k;
        &mut self.values[start..start + k]
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexGrid {
        ComplexGrid {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> ComplexGrid {
        self.map(|v| v * c)
    }

    pub fn sub(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        ensure_same_shape(self, other)?;
        Ok(ComplexGrid {
            shape: self.shape,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        ensure_same_shape(self, other)?;
        Ok(ComplexGrid {
            shape: self.shape,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

pub(crate) fn ensure_same_shape(a: &ComplexGrid, b: &ComplexGrid) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch { left: a.shape, right: b.shape });
    }
    Ok(())
}

/// `sum a * conj(b)`: linear in `a`, conjugate-linear in `b`.
pub fn inner_product(a: &ComplexGrid, b: &ComplexGrid) -> Result<Complex64> {
    ensure_same_shape(a, b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y.conj()).sum())
}

pub fn fro_norm_sq(a: &ComplexGrid) -> f64 {
    a.values.iter().map(|v| v.norm_sqr()).sum()
}

pub fn to_db(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!("dB conversion needs a positive ratio, got {ratio}")));
    }
    Ok(10.0 * ratio.log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_grid(shape: GridShape, seed: u64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexGrid::from_fn(shape, |_, _, _, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn ones_self_inner_product_is_energy() {
        let s = GridShape::new(2, 2, 1, 1).unwrap();
        let a = ComplexGrid::from_elem(s, c(1.0, 0.0));
        assert_eq!(inner_product(&a, &a).unwrap(), c(4.0, 0.0));
        assert_eq!(fro_norm_sq(&a), 4.0);
        assert_eq!(fro_norm_sq(&ComplexGrid::zeros(s)), 0.0);
    }

    #[test]
    fn linear_in_first_argument() {
        let s = GridShape::new(3, 2, 1, 2).unwrap();
        let b = random_grid(s, 1);
        let a = b.scale(c(0.0, 1.0));
        let ip = inner_product(&a, &b).unwrap();
        let e = fro_norm_sq(&b);
        assert!((ip - c(0.0, e)).norm() < 1e-12);
    }

    #[test]
    fn matches_elementwise_loop() {
        let s = GridShape::new(2, 1, 2, 1).unwrap();
        let a = random_grid(s, 7);
        let b = random_grid(s, 8);
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..4 {
            let (x, y) = (a.values()[i], b.values()[i]);
            re += x.re * y.re + x.im * y.im;
            im += x.im * y.re - x.re * y.im;
        }
        let ip = inner_product(&a, &b).unwrap();
        assert!((ip.re - re).abs() < 1e-15 && (ip.im - im).abs() < 1e-15);
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = ComplexGrid::zeros(GridShape::new(2, 2, 1, 1).unwrap());
        let b = ComplexGrid::zeros(GridShape::new(4, 2, 1, 1).unwrap());
        let msg = inner_product(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("2x2x1x1") && msg.contains("4x2x1x1"), "{msg}");
    }

    #[test]
    fn db_values() {
        assert_eq!(to_db(1.0).unwrap(), 0.0);
        assert!((to_db(2.67).unwrap() - 4.26).abs() < 0.01);
        assert!((to_db(0.13).unwrap() + 8.86).abs() < 0.01);
        assert!(to_db(0.0).is_err());
        assert!(to_db(-1.0).is_err());
    }

    #[test]
    fn layout_is_subcarrier_fastest() {
        let s = GridShape::new(3, 2, 2, 2).unwrap();
        assert_eq!(s.index(1, 0, 0, 0), 1);
        assert_eq!(s.index(0, 1, 0, 0), 3);
        assert_eq!(s.index(0, 0, 0, 1), 6);
        assert_eq!(s.index(0, 0, 1, 0), 12);
        assert!(GridShape::new(0, 1, 1, 1).is_err());
        assert_eq!(GridShape::from_resource_blocks(64, 14, 4, 2).unwrap().k, 768);
    }

    #[test]
    fn pair_slice_round_trip() {
        let s = GridShape::new(4, 3, 2, 2).unwrap();
        let g = random_grid(s, 3);
        let p = g.pair(1, 0);
        for l in 0..3 {
            for k in 0..4 {
                assert_eq!(p.get(k, l, 0, 0), g.get(k, l, 1, 0));
            }
        }
    }

    proptest! {
        #[test]
        fn cauchy_schwarz_and_hermitian_symmetry(seed_a in 0u64..10_000, seed_b in 0u64..10_000) {
            let s = GridShape::new(5, 3, 1, 2).unwrap();
            let a = random_grid(s, seed_a);
            let b = random_grid(s, seed_b + 20_000);
            let ab = inner_product(&a, &b).unwrap();
            let ba = inner_product(&b, &a).unwrap();
            prop_assert!(ab.norm_sqr() <= fro_norm_sq(&a) * fro_norm_sq(&b) * (1.0 + 1e-12));
            prop_assert!((ab - ba.conj()).norm() < 1e-12);
            prop_assert!((inner_product(&a, &a).unwrap().re - fro_norm_sq(&a)).abs() < 1e-12);
        }

        #[test]
        fn db_of_product_is_sum(x in 1e-6f64..1e6, y in 1e-6f64..1e6) {
            let lhs = to_db(x * y).unwrap();
            let rhs = to_db(x).unwrap() + to_db(y).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
