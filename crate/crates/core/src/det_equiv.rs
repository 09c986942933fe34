//! Deterministic equivalent of the ergodic SE.
//!
//! The auxiliaries `(gamma_k, psi_k)` solve the coupled system
//!
//! ```text
//! Psi       = sum_k 1/sigma2 * U_Gk diag(Omega_k psi_k) U_Gk^H
//! gamma_k,m = 1/sigma2 * u_Gk,m^H (I + Psi)^-1 u_Gk,m      m = 1..N_R
//! g_k       = Omega_k^T gamma_k
//! psi_k,n   = lambda_k,n / (1 + g_k,n lambda_k,n)
//! ```
//!
//! with `U_Gk = H1 diag(phi) U2k`. All users are updated jointly from the
//! current global `Psi` (Jacobi sweeps).

use nalgebra::DVector;

use crate::channel::ChannelModel;
use crate::linalg::{c, inverse_hpd, log2_det_hpd, CMatrix, CVector};
use crate::metrics::PowerAllocation;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeOptions {
    /// Stop when `max |psi_new - psi| <= eps`.
    pub eps: f64,
    pub max_iter: usize,
    /// Sweeps without a new best residual before damping switches on.
    pub stall_window: usize,
    /// Weight of the new iterate once damping is active.
    pub damping: f64,
}

impl Default for DeOptions {
    fn default() -> Self {
        DeOptions {
            eps: 1e-10,
            max_iter: 500,
            stall_window: 10,
            damping: 0.5,
        }
    }
}

/// Converged auxiliaries and the resulting asymptotic SE.
#[derive(Debug, Clone, PartialEq)]
pub struct DeState {
    /// Length `N_R` per user.
    pub gamma: Vec<DVector<f64>>,
    /// Length `N_k` per user.
    pub psi: Vec<DVector<f64>>,
    /// Diagonal of `Gamma_k = diag(Omega_k^T gamma_k)`, length `N_k`.
    pub g: Vec<DVector<f64>>,
    /// `M x M` Hermitian PSD.
    pub big_psi: CMatrix,
    /// `log2 det(I + Psi) - 1/ln2 sum_k gamma_k^T Omega_k psi_k`; the part of
    /// the SE that does not move when `Lambda` changes with `(gamma, psi)` frozen.
    pub const_bits: f64,
    pub se_bits: f64,
    pub iterations: usize,
    pub residual: f64,
}

struct Sweep {
    gamma: Vec<DVector<f64>>,
    g: Vec<DVector<f64>>,
    big_psi: CMatrix,
}

fn sweep(bases: &[CMatrix], model: &ChannelModel, psi: &[DVector<f64>], inv_noise: f64) -> Result<Sweep> {
    let m = model.bs_antennas();
    let mut big_psi = CMatrix::zeros(m, m);
    for ((ug, user), p) in bases.iter().zip(&model.users).zip(psi) {
        let w = &user.omega * p;
        for (col, &wn) in ug.column_iter().zip(w.iter()) {
            if wn != 0.0 {
                big_psi.gerc(c(inv_noise * wn), &col, &col, c(1.0));
            }
        }
    }
    let inv = inverse_hpd(&(CMatrix::identity(m, m) + &big_psi), "I + Psi")?;
    let mut gamma = Vec::with_capacity(bases.len());
    let mut g = Vec::with_capacity(bases.len());
    for (ug, user) in bases.iter().zip(&model.users) {
        let t = &inv * ug;
        let gk = DVector::from_fn(ug.ncols(), |col, _| {
            let q: f64 = ug.column(col).iter().zip(t.column(col).iter()).map(|(a, b)| (a.conj() * b).re).sum();
            inv_noise * q.max(0.0)
        });
        g.push(user.omega.transpose() * &gk);
        gamma.push(gk);
    }
    Ok(Sweep { gamma, g, big_psi })
}

fn check_inputs(model: &ChannelModel, phi: &CVector, alloc: &PowerAllocation, noise_power: f64) -> Result<()> {
    if phi.len() != model.ris_elements() {
        return Err(Error::dims("phase vector", model.ris_elements(), phi.len()));
    }
    if alloc.num_users() != model.num_users() {
        return Err(Error::dims("power allocation users", model.num_users(), alloc.num_users()));
    }
    for (p, u) in alloc.powers.iter().zip(&model.users) {
        if p.len() != u.omega.ncols() {
            return Err(Error::dims("user powers", u.omega.ncols(), p.len()));
        }
        if p.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument("powers must be nonnegative".into()));
        }
    }
    if !(noise_power > 0.0) {
        return Err(Error::InvalidArgument("noise power must be > 0".into()));
    }
    Ok(())
}

/// Solves the fixed-point system and evaluates the DE SE.
pub fn de_fixed_point(
    model: &ChannelModel,
    phi: &CVector,
    alloc: &PowerAllocation,
    noise_power: f64,
    opts: &DeOptions,
) -> Result<DeState> {
    check_inputs(model, phi, alloc, noise_power)?;
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be > 0".into()));
    }
    let bases = model.cascaded_bases(phi);
    let inv_noise = 1.0 / noise_power;
    let lambda = &alloc.powers;

    let update = |g: &[DVector<f64>]| -> Vec<DVector<f64>> {
        lambda
            .iter()
            .zip(g)
            .map(|(l, gk)| l.zip_map(gk, |l, g| l / (1.0 + g * l)))
            .collect()
    };

    let mut psi: Vec<DVector<f64>> = lambda.clone();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut damped = false;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let s = sweep(&bases, model, &psi, inv_noise)?;
        let mut next = update(&s.g);
        if damped {
            for (n, p) in next.iter_mut().zip(&psi) {
                *n = n.scale(opts.damping) + p.scale(1.0 - opts.damping);
            }
        }
        residual = next
            .iter()
            .zip(&psi)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        psi = next;
        if residual <= opts.eps {
            break;
        }
        if residual < best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.stall_window && !damped {
                log::debug!("DE fixed point stalled at residual {residual:.3e}; damping on");
                damped = true;
            }
        }
    }
    if !(residual <= opts.eps) {
        return Err(Error::DeNotConverged { iterations, residual });
    }

    let s = sweep(&bases, model, &psi, inv_noise)?;
    let m = model.bs_antennas();
    let log_det = log2_det_hpd(&(CMatrix::identity(m, m) + &s.big_psi), "I + Psi")?;
    let correction: f64 = s
        .gamma
        .iter()
        .zip(&psi)
        .zip(&model.users)
        .map(|((gk, pk), u)| gk.dot(&(&u.omega * pk)))
        .sum();
    let mut state = DeState {
        gamma: s.gamma,
        psi,
        g: s.g,
        big_psi: s.big_psi,
        const_bits: log_det - correction / std::f64::consts::LN_2,
        se_bits: 0.0,
        iterations,
        residual,
    };
    state.se_bits = de_se(&state, alloc);
    Ok(state)
}

/// `sum_k log2 det(I + Gamma_k Lambda_k) + log2 det(I + Psi)
///  - 1/ln2 sum_k gamma_k^T Omega_k psi_k`.
pub fn de_se(state: &DeState, alloc: &PowerAllocation) -> f64 {
    variable_bits(&state.g, &alloc.powers) + state.const_bits
}

/// `sum_k sum_n log2(1 + g_k,n lambda_k,n)`.
pub fn variable_bits(g: &[DVector<f64>], powers: &[DVector<f64>]) -> f64 {
    g.iter()
        .zip(powers)
        .map(|(gk, lk)| gk.iter().zip(lk.iter()).map(|(g, l)| (g * l).ln_1p()).sum::<f64>())
        .sum::<f64>()
        / std::f64::consts::LN_2
}

impl DeState {
    /// Largest violation of the two fixed-point equations when the stored
    /// `(gamma, psi)` are substituted back in.
    pub fn fixed_point_residual(&self, model: &ChannelModel, phi: &CVector, alloc: &PowerAllocation, noise_power: f64) -> Result<f64> {
        let bases = model.cascaded_bases(phi);
        let s = sweep(&bases, model, &self.psi, 1.0 / noise_power)?;
        let mut worst: f64 = 0.0;
        for k in 0..self.psi.len() {
            for (a, b) in s.gamma[k].iter().zip(self.gamma[k].iter()) {
                worst = worst.max((a - b).abs());
            }
            for ((l, g), p) in alloc.powers[k].iter().zip(s.g[k].iter()).zip(self.psi[k].iter()) {
                worst = worst.max((l / (1.0 + g * l) - p).abs());
            }
        }
        Ok(worst)
    }
}
