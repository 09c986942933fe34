//! Performance functionals: Monte-Carlo ergodic SE, consumed power, EE and RE.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::channel::{draw_h2, effective_channel, ChannelModel};
use crate::config::SystemConfig;
use crate::linalg::{c, log2_det_hpd, scale_cols_real, CMatrix, CVector};
use crate::{Error, Result};

/// Per-user transmit covariances `Q_k = V_k diag(powers_k) V_k^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// Eigen-powers of each `Q_k`, watts.
    pub powers: Vec<DVector<f64>>,
    /// Eigenbasis of each `Q_k`.
    pub directions: Vec<CMatrix>,
}

impl PowerAllocation {
    /// Full budget split evenly over the statistical eigen-directions.
    pub fn equal(cfg: &SystemConfig, model: &ChannelModel) -> Self {
        let powers = cfg
            .user_antennas
            .iter()
            .zip(&cfg.max_power)
            .map(|(&nk, &p)| fit_budget(DVector::from_element(nk, p / nk as f64), p))
            .collect();
        Self::along_statistical_directions(powers, model)
    }

    pub fn along_statistical_directions(powers: Vec<DVector<f64>>, model: &ChannelModel) -> Self {
        PowerAllocation {
            powers,
            directions: model.users.iter().map(|u| u.v2.clone()).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.powers.len()
    }

    pub fn trace(&self, k: usize) -> f64 {
        self.powers[k].sum()
    }

    pub fn covariance(&self, k: usize) -> CMatrix {
        let v = &self.directions[k];
        scale_cols_real(v, &self.powers[k]) * v.adjoint()
    }

    /// Nonnegativity and per-user budgets (with `1e-9` slack).
    pub fn is_feasible(&self, cfg: &SystemConfig) -> bool {
        self.powers.len() == cfg.num_users()
            && self
                .powers
                .iter()
                .zip(&cfg.max_power)
                .all(|(p, &pmax)| p.iter().all(|&x| x >= 0.0) && p.sum() <= pmax + 1e-9)
    }
}

/// Shrinks a nonnegative vector until its floating-point sum is at most
/// `cap`, so budgets hold exactly after rounding.
pub fn fit_budget(mut x: DVector<f64>, cap: f64) -> DVector<f64> {
    while x.sum() > cap {
        let s = x.sum();
        x *= cap / s * (1.0 - f64::EPSILON);
    }
    x
}

/// SE, EE, RE and consumed power of one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// bits/s/Hz
    pub se: f64,
    /// bits/Joule
    pub ee: f64,
    /// bits/Joule/Hz
    pub re: f64,
    /// watts
    pub p_sum: f64,
}

impl MetricReport {
    pub fn new(cfg: &SystemConfig, se: f64, alloc: &PowerAllocation) -> Result<Self> {
        let p_sum = total_power(cfg, alloc);
        let (re, ee) = re_metric(cfg, se, p_sum)?;
        Ok(MetricReport { se, ee, re, p_sum })
    }
}

/// Monte-Carlo estimate of the ergodic SE,
/// `E log2 det(I + 1/sigma2 * sum_k G_k Q_k G_k^H)`.
///
/// Draws are evaluated in parallel but reduced in index order, so the result
/// is bit-identical for a given seed.
pub fn ergodic_se_mc(
    model: &ChannelModel,
    phi: &CVector,
    alloc: &PowerAllocation,
    noise_power: f64,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be >= 1".into()));
    }
    if alloc.num_users() != model.num_users() {
        return Err(Error::dims("power allocation users", model.num_users(), alloc.num_users()));
    }
    let m = model.bs_antennas();
    // Q_k^{1/2} = V_k diag(sqrt(p))
    let roots: Vec<CMatrix> = alloc
        .powers
        .iter()
        .zip(&alloc.directions)
        .map(|(p, v)| scale_cols_real(v, &p.map(|x| x.max(0.0).sqrt())))
        .collect();

    let per_draw: Vec<f64> = (0..n_draws as u64)
        .into_par_iter()
        .map(|i| {
            let draw = draw_h2(model, seed, i);
            let mut s = CMatrix::identity(m, m);
            for (k, root) in roots.iter().enumerate() {
                let f = effective_channel(model, phi, &draw, k)? * root;
                s += (&f * f.adjoint()).scale(1.0 / noise_power);
            }
            log2_det_hpd(&s, "ergodic SE")
        })
        .collect::<Result<_>>()?;

    let total = per_draw.iter().fold(0.0, |acc, x| acc + x);
    Ok(total / n_draws as f64)
}

/// Consumed power: `sum_k (xi_k tr(Q_k) + P_c,k) + P_BS + N_R P_s(b)`.
pub fn total_power(cfg: &SystemConfig, alloc: &PowerAllocation) -> f64 {
    let transmit: f64 = alloc
        .powers
        .iter()
        .zip(&cfg.amplifier_inefficiency)
        .map(|(p, xi)| xi * p.sum())
        .sum();
    transmit + cfg.static_power()
}

/// Returns `(RE, EE)` where `RE = se/p_sum + beta se/P_tot` and
/// `EE = W se/p_sum`.
pub fn re_metric(cfg: &SystemConfig, se: f64, p_sum: f64) -> Result<(f64, f64)> {
    if !(p_sum > 0.0) {
        return Err(Error::InvalidArgument(format!("consumed power {p_sum} must be > 0")));
    }
    let re = se / p_sum + cfg.beta * se / cfg.total_budget();
    let ee = cfg.bandwidth_hz * se / p_sum;
    Ok((re, ee))
}

/// Weighting factor equivalent to maximizing `(1 - alpha) EE + alpha SE`.
pub fn beta_from_alpha(alpha: f64, cfg: &SystemConfig) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(alpha / (1.0 - alpha) * cfg.total_budget() / cfg.bandwidth_hz)
}

/// All-ones phase vector, as a helper for tests and baselines.
pub fn unit_phases(n: usize) -> CVector {
    CVector::from_element(n, c(1.0))
}
