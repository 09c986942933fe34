//! WMMSE reformulation of the phase subproblem.
//!
//! For fixed power the phase-dependent part of the DE SE is
//! `f5(phi) = log2 det(I + 1/sigma2 H1 Phi A Phi^H H1^H)`, with
//! `A = sum_k U2k diag(Omega_k psi_k) U2k^H`. Fixing the receiver `U_h` and
//! weight `W_h` turns `f5` maximization into the quadratic
//! `f6a(phi) = phi^H (B o A^T) phi - 2 Re(phi^T c)`.

use nalgebra::DVector;

use crate::channel::{scale_cols, ChannelModel};
use crate::linalg::{c, hermitian_part, inverse_hpd, log2_det_hpd, psd_sqrt, CMatrix, CVector};
use crate::{Error, Result};

/// `sum_k U2k diag(Omega_k psi_k) U2k^H`.
pub fn build_a(model: &ChannelModel, psi: &[DVector<f64>]) -> Result<CMatrix> {
    if psi.len() != model.num_users() {
        return Err(Error::dims("psi users", model.num_users(), psi.len()));
    }
    let n = model.ris_elements();
    let mut a = CMatrix::zeros(n, n);
    for (u, p) in model.users.iter().zip(psi) {
        if p.len() != u.omega.ncols() {
            return Err(Error::dims("psi length", u.omega.ncols(), p.len()));
        }
        let w = (&u.omega * p).map(c);
        a += scale_cols(&u.u2, &w) * u.u2.adjoint();
    }
    Ok(hermitian_part(&a))
}

/// `(U^H H1 Phi A^1/2 - I)(.)^H + sigma2 U^H U`.
pub fn mse_matrix(u: &CMatrix, h1: &CMatrix, phi: &CVector, a_sqrt: &CMatrix, noise_power: f64) -> CMatrix {
    let n = a_sqrt.nrows();
    let d = u.adjoint() * scale_cols(h1, phi) * a_sqrt - CMatrix::identity(n, n);
    hermitian_part(&(&d * d.adjoint() + (u.adjoint() * u).scale(noise_power)))
}

/// Closed-form receiver and weight, and the quantities of the phase
/// quadratic built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    /// `M x N_R`.
    pub u: CMatrix,
    pub e: CMatrix,
    pub w: CMatrix,
    pub a: CMatrix,
    pub a_sqrt: CMatrix,
    /// `H1^H U W U^H H1`.
    pub b: CMatrix,
    /// `A^1/2 W U^H H1`.
    pub c_mat: CMatrix,
    /// Diagonal of `c_mat`.
    pub c: CVector,
}

impl WmmseState {
    /// `B o A^T`.
    pub fn quadratic(&self) -> CMatrix {
        hadamard_transpose(&self.b, &self.a)
    }
}

/// `B o A^T`, so that `tr(Phi^H B Phi A) = phi^H (B o A^T) phi`.
pub fn hadamard_transpose(b: &CMatrix, a: &CMatrix) -> CMatrix {
    hermitian_part(&CMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * a[(j, i)]))
}

pub fn wmmse_closed_forms(h1: &CMatrix, phi: &CVector, a: &CMatrix, noise_power: f64) -> Result<WmmseState> {
    if !(noise_power > 0.0) {
        return Err(Error::InvalidArgument("noise power must be > 0".into()));
    }
    if phi.len() != h1.ncols() || a.nrows() != h1.ncols() {
        return Err(Error::dims("WMMSE phase/A size", h1.ncols(), phi.len()));
    }
    let m = h1.nrows();
    let a_sqrt = psd_sqrt(a);
    let h1_phi = scale_cols(h1, phi);
    let g = &h1_phi * &a_sqrt;
    let cov = CMatrix::identity(m, m).scale(noise_power) + &g * g.adjoint();
    let u = inverse_hpd(&cov, "receiver covariance")? * &g;
    let e = mse_matrix(&u, h1, phi, &a_sqrt, noise_power);
    let w = inverse_hpd(&e, "MSE matrix").map_err(|_| Error::Singular { context: "MSE matrix" })?;
    let uh_h1 = u.adjoint() * h1;
    let b = hermitian_part(&(uh_h1.adjoint() * &w * &uh_h1));
    let c_mat = &a_sqrt * &w * &uh_h1;
    let cvec = c_mat.diagonal();
    Ok(WmmseState {
        u,
        e,
        w,
        a: a.clone(),
        a_sqrt,
        b,
        c_mat,
        c: cvec,
    })
}

/// `log2 det(I + 1/sigma2 H1 Phi A Phi^H H1^H)`.
pub fn f5(h1: &CMatrix, phi: &CVector, a: &CMatrix, noise_power: f64) -> Result<f64> {
    let h1_phi = scale_cols(h1, phi);
    let m = h1.nrows();
    let s = CMatrix::identity(m, m) + (&h1_phi * a * h1_phi.adjoint()).scale(1.0 / noise_power);
    log2_det_hpd(&hermitian_part(&s), "phase objective")
}

/// `phi^H Q phi - 2 Re(phi^T c)`.
pub fn f6a_eval(phi: &CVector, q: &CMatrix, cvec: &CVector) -> f64 {
    let quad = phi.dotc(&(q * phi)).re;
    let lin: f64 = phi.iter().zip(cvec.iter()).map(|(p, c)| (p * c).re).sum();
    quad - 2.0 * lin
}

/// `tr(W E)` for the MSE matrix at `phi`; differs from `f6a` by a constant.
pub fn weighted_mse(st: &WmmseState, h1: &CMatrix, phi: &CVector, noise_power: f64) -> f64 {
    let e = mse_matrix(&st.u, h1, phi, &st.a_sqrt, noise_power);
    (&st.w * e).trace().re
}
