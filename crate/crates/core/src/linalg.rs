//! Small dense complex linear algebra: Hermitian positive-definite solves.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative diagonal jitter added when the plain factorization fails.
pub const JITTER: f64 = 1e-10;

/// Pivots below this fraction of the largest diagonal entry count as a failure.
const PIVOT_TOL: f64 = 1e-13;

/// Lower-triangular Cholesky factor `L` with `A = L L^H`.
///
/// Only the lower triangle of `a` is read.
pub fn cholesky(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidArgument(format!("cholesky needs a square matrix, got {:?}", a.dim())));
    }
    let scale = (0..n).map(|i| a[[i, i]].re.abs()).fold(0.0, f64::max);
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for p in 0..j {
            d -= l[[j, p]].norm_sqr();
        }
        if !(d > PIVOT_TOL * scale) {
            return Err(Error::Singular(format!("non-positive pivot {d:.3e} at row {j}")));
        }
        let d = d.sqrt();
        l[[j, j]] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` given the factor from [`cholesky`].
pub fn cholesky_solve(l: &Array2<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = l.nrows();
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for p in 0..i {
            s -= l[[i, p]] * y[p];
        }
        y[i] = s / l[[i, i]].re;
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[[p, i]].conj() * y[p];
        }
        y[i] = s / l[[i, i]].re;
    }
    y
}

/// Factorizes a Hermitian positive-definite matrix. When `allow_jitter` is
/// set and the plain factorization fails, retries once with `JITTER` times the
/// mean diagonal added to the diagonal.
pub fn factor_hpd(a: &Array2<Complex64>, allow_jitter: bool) -> Result<Array2<Complex64>> {
    match cholesky(a) {
        Ok(l) => Ok(l),
        Err(e) if !allow_jitter => Err(e),
        Err(_) => {
            let n = a.nrows();
            let mean = (0..n).map(|i| a[[i, i]].re.abs()).sum::<f64>() / n.max(1) as f64;
            let eps = JITTER * mean.max(f64::MIN_POSITIVE);
            let mut b = a.clone();
            for i in 0..n {
                b[[i, i]] += eps;
            }
            cholesky(&b)
        }
    }
}

/// `A x` for a dense matrix.
pub fn matvec(a: &Array2<Complex64>, x: &[Complex64]) -> Vec<Complex64> {
    a.rows()
        .into_iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}
