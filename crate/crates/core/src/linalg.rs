//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result, C64};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// `(a + a^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix: `a = V diag(w) V^H`.
pub fn hermitian_eig(a: &CMatrix) -> (DVector<f64>, CMatrix) {
    let eig = hermitian_part(a).symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Hermitian PSD square root with negative eigenvalues clipped to zero.
pub fn psd_sqrt(a: &CMatrix) -> CMatrix {
    let (w, v) = hermitian_eig(a);
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * w[j].max(0.0).sqrt());
    &scaled * v.adjoint()
}

/// Cholesky factor of a Hermitian positive-definite matrix.
///
/// Complex square roots never fail, so the factor's diagonal is checked to be
/// real and positive. A failed attempt is retried once on the Hermitian part
/// of `a` before giving up.
fn cholesky_hpd(a: &CMatrix, context: &'static str) -> Result<Cholesky<C64, Dyn>> {
    let valid = |ch: &Cholesky<C64, Dyn>| {
        let l = ch.l_dirty();
        (0..l.nrows()).all(|i| {
            let d = l[(i, i)];
            d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-10 * d.re
        })
    };
    a.clone()
        .cholesky()
        .filter(valid)
        .or_else(|| hermitian_part(a).cholesky().filter(valid))
        .ok_or(Error::NotPositiveDefinite { context })
}

/// `log2 det(a)` for Hermitian positive-definite `a`, via Cholesky.
pub fn log2_det_hpd(a: &CMatrix, context: &'static str) -> Result<f64> {
    let chol = cholesky_hpd(a, context)?;
    let l = chol.l_dirty();
    let ln: f64 = (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum();
    Ok(2.0 * ln / std::f64::consts::LN_2)
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn inverse_hpd(a: &CMatrix, context: &'static str) -> Result<CMatrix> {
    Ok(hermitian_part(&cholesky_hpd(a, context)?.inverse()))
}

/// `diag(d) * m` without forming the diagonal matrix.
pub fn scale_rows(d: &CVector, m: &CMatrix) -> CMatrix {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)])
}

/// `m * diag(d)` with a real diagonal.
pub fn scale_cols_real(m: &CMatrix, d: &DVector<f64>) -> CMatrix {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[j])
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||m^H m - I||_F`.
pub fn unitarity_error(m: &CMatrix) -> f64 {
    let g = m.adjoint() * m;
    frobenius(&(g - CMatrix::identity(m.ncols(), m.ncols())))
}

/// Spectral norm of a Hermitian matrix by power iteration.
pub fn spectral_norm_hermitian(a: &CMatrix, iterations: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // fixed, non-degenerate start vector
    let mut x = CVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    x /= c(x.norm());
    let mut est = 0.0;
    for _ in 0..iterations {
        let y = a * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm;
        x = y / c(norm);
    }
    est
}

/// `Re(x^H y)`, the real inner product on complex vectors.
pub fn real_inner(x: &CVector, y: &CVector) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}
