//! Transmit power allocation along the statistical eigen-directions.
//!
//! With the DE auxiliaries frozen, the SE seen by the power block is
//! `R(Lambda) = sum_k sum_n log2(1 + g_k,n lambda_k,n) + const`, and the
//! fractional objective `R/P + beta R/P_tot` is handled by the quadratic
//! transform
//!
//! ```text
//! f4(Lambda, y) = 2 y sqrt(R) - y^2 P(Lambda) + beta R / P_tot
//! ```
//!
//! alternating the closed-form `y` with a concave maximization over `Lambda`.

use std::f64::consts::LN_2;

use nalgebra::DVector;

use crate::channel::ChannelModel;
use crate::config::SystemConfig;
use crate::det_equiv::{variable_bits, DeState};
use crate::linalg::CMatrix;
use crate::metrics::{fit_budget, PowerAllocation};
use crate::{Error, Result};

/// The transmit eigenbasis that maximizes the DE SE is the channel's own
/// transmit eigenbasis.
pub fn optimal_directions(model: &ChannelModel) -> Vec<CMatrix> {
    model.users.iter().map(|u| u.v2.clone()).collect()
}

/// `sqrt(se) / p`.
pub fn optimal_y(se_bits: f64, p_watts: f64) -> Result<f64> {
    if !(p_watts > 0.0) {
        return Err(Error::InvalidArgument(format!("power {p_watts} must be > 0")));
    }
    Ok(se_bits.max(0.0).sqrt() / p_watts)
}

/// DE quantities held fixed during a power update.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDe {
    /// Per-user effective eigen-gains.
    pub g: Vec<DVector<f64>>,
    /// SE terms that do not depend on `Lambda`, bits/s/Hz.
    pub const_bits: f64,
}

impl From<&DeState> for FrozenDe {
    fn from(st: &DeState) -> Self {
        FrozenDe {
            g: st.g.clone(),
            const_bits: st.const_bits,
        }
    }
}

impl FrozenDe {
    pub fn rate(&self, powers: &[DVector<f64>]) -> f64 {
        variable_bits(&self.g, powers) + self.const_bits
    }

    /// `dR / dlambda_k,n = g / (ln2 (1 + g lambda))`.
    pub fn rate_gradient(&self, powers: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.g
            .iter()
            .zip(powers)
            .map(|(g, l)| g.zip_map(l, |g, l| g / (LN_2 * (1.0 + g * l))))
            .collect()
    }
}

/// The pieces of the power model the objective needs.
#[derive(Debug, Clone)]
struct Objective<'a> {
    frozen: &'a FrozenDe,
    xi: &'a [f64],
    static_power: f64,
    p_max: &'a [f64],
    /// `beta / P_tot`.
    beta_rel: f64,
}

impl<'a> Objective<'a> {
    fn new(frozen: &'a FrozenDe, cfg: &'a SystemConfig) -> Result<Self> {
        if frozen.g.len() != cfg.num_users() {
            return Err(Error::dims("frozen DE users", cfg.num_users(), frozen.g.len()));
        }
        for (g, &nk) in frozen.g.iter().zip(&cfg.user_antennas) {
            if g.len() != nk {
                return Err(Error::dims("frozen DE gains", nk, g.len()));
            }
        }
        Ok(Objective {
            frozen,
            xi: &cfg.amplifier_inefficiency,
            static_power: cfg.static_power(),
            p_max: &cfg.max_power,
            beta_rel: cfg.beta / cfg.total_budget(),
        })
    }

    fn power(&self, x: &[DVector<f64>]) -> f64 {
        x.iter().zip(self.xi).map(|(l, xi)| xi * l.sum()).sum::<f64>() + self.static_power
    }

    fn f3(&self, x: &[DVector<f64>]) -> f64 {
        let r = self.frozen.rate(x);
        r / self.power(x) + self.beta_rel * r
    }

    fn f4(&self, x: &[DVector<f64>], y: f64) -> f64 {
        let r = self.frozen.rate(x).max(0.0);
        2.0 * y * r.sqrt() - y * y * self.power(x) + self.beta_rel * r
    }

    fn f4_gradient(&self, x: &[DVector<f64>], y: f64) -> Vec<DVector<f64>> {
        let r = self.frozen.rate(x);
        let outer = if y > 0.0 { y / r.sqrt() } else { 0.0 } + self.beta_rel;
        self.frozen
            .rate_gradient(x)
            .into_iter()
            .zip(self.xi)
            .map(|(d, xi)| d.map(|v| outer * v - y * y * xi))
            .collect()
    }

    fn project(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        x.iter().zip(self.p_max).map(|(v, &p)| project_capped_simplex(v, p)).collect()
    }

    fn equal_power(&self) -> Vec<DVector<f64>> {
        self.frozen
            .g
            .iter()
            .zip(self.p_max)
            .map(|(g, &p)| DVector::from_element(g.len(), p / g.len() as f64))
            .collect()
    }
}

/// Euclidean projection onto `{x >= 0, sum x <= cap}`.
pub fn project_capped_simplex(x: &DVector<f64>, cap: f64) -> DVector<f64> {
    let clipped = x.map(|v| v.max(0.0));
    if clipped.sum() <= cap {
        return clipped;
    }
    // budget active: project onto {x >= 0, sum x = cap}
    let mut sorted: Vec<f64> = x.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        acc += v;
        let t = (acc - cap) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    fit_budget(x.map(|v| (v - theta).max(0.0)), cap)
}

fn distance(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

fn axpy(x: &[DVector<f64>], t: f64, d: &[DVector<f64>]) -> Vec<DVector<f64>> {
    x.iter().zip(d).map(|(a, b)| a + b.scale(t)).collect()
}

fn inner(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    /// Stop when `||x - P(x + grad)|| <= tol`.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            tol: 1e-6,
            max_steps: 2000,
        }
    }
}

const ARMIJO_SIGMA: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Maximizes `f4(., y)` over the per-user capped simplices by projected
/// gradient ascent with Armijo backtracking, starting from `warm`.
pub fn inner_concave_solve(
    frozen: &FrozenDe,
    y: f64,
    cfg: &SystemConfig,
    warm: &PowerAllocation,
    opts: &InnerOptions,
) -> Result<PowerAllocation> {
    let obj = Objective::new(frozen, cfg)?;
    let powers = inner_solve(&obj, y, &warm.powers, opts)?;
    Ok(PowerAllocation {
        powers,
        directions: warm.directions.clone(),
    })
}

fn inner_solve(obj: &Objective, y: f64, warm: &[DVector<f64>], opts: &InnerOptions) -> Result<Vec<DVector<f64>>> {
    if !(y >= 0.0) {
        return Err(Error::InvalidArgument(format!("y = {y} must be >= 0")));
    }
    if y == 0.0 && obj.beta_rel == 0.0 {
        return Ok(warm.to_vec());
    }
    let mut x = obj.project(warm);
    if obj.frozen.rate(&x) <= 0.0 {
        x = obj.equal_power();
        if obj.frozen.rate(&x) <= 0.0 {
            return Ok(warm.to_vec());
        }
    }
    let mut fx = obj.f4(&x, y);
    for _ in 0..opts.max_steps {
        let grad = obj.f4_gradient(&x, y);
        let full = obj.project(&axpy(&x, 1.0, &grad));
        if distance(&x, &full) <= opts.tol {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = if t == 1.0 { full.clone() } else { obj.project(&axpy(&x, t, &grad)) };
            let step: Vec<DVector<f64>> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
            let fc = obj.f4(&cand, y);
            if fc >= fx + ARMIJO_SIGMA * inner(&grad, &step) {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
            }
            // no ascent left at floating-point resolution
            None => break,
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QtOptions {
    /// Stop when the objective changes by at most `eps` relative.
    pub eps: f64,
    pub max_iter: usize,
    pub inner: InnerOptions,
}

impl Default for QtOptions {
    fn default() -> Self {
        QtOptions {
            eps: 1e-4,
            max_iter: 50,
            inner: InnerOptions::default(),
        }
    }
}

/// Outcome of the quadratic-transform loop.
#[derive(Debug, Clone, PartialEq)]
pub struct QtState {
    /// Last auxiliary scalar used.
    pub y: f64,
    /// Final `R/P + beta R/P_tot`.
    pub objective: f64,
    /// Objective before the first and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates `y = sqrt(R)/P` and the concave `Lambda` update until the
/// fractional objective settles.
///
/// With every `xi_k = 0` the consumed power no longer depends on `Lambda`
/// and a single iteration is exact.
pub fn quadratic_transform_solve(
    frozen: &FrozenDe,
    cfg: &SystemConfig,
    init: &PowerAllocation,
    opts: &QtOptions,
) -> Result<(PowerAllocation, QtState)> {
    let obj = Objective::new(frozen, cfg)?;
    if !init.is_feasible(cfg) {
        return Err(Error::InvalidArgument("initial power allocation infeasible".into()));
    }
    let power_free = cfg.amplifier_inefficiency.iter().all(|&xi| xi == 0.0);
    let mut x = init.powers.clone();
    let mut f = obj.f3(&x);
    let mut state = QtState {
        y: 0.0,
        objective: f,
        trace: vec![f],
        iterations: 0,
        converged: false,
    };
    while state.iterations < opts.max_iter {
        state.iterations += 1;
        state.y = optimal_y(frozen.rate(&x), obj.power(&x))?;
        x = inner_solve(&obj, state.y, &x, &opts.inner)?;
        let next = obj.f3(&x);
        state.trace.push(next);
        let delta = (next - f).abs();
        f = next;
        if power_free || delta <= opts.eps * f.abs().max(f64::MIN_POSITIVE) {
            state.converged = true;
            break;
        }
    }
    state.objective = f;
    Ok((
        PowerAllocation {
            powers: x,
            directions: init.directions.clone(),
        },
        state,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, RhoRange};
    use crate::config::PhaseConstraint;
    use crate::det_equiv::{de_fixed_point, DeOptions};
    use crate::linalg::{unitarity_error, CVector};
    use crate::C64;
    use proptest::prelude::*;

    fn one_user(g: &[f64], pmax_dbm: f64) -> (SystemConfig, FrozenDe, PowerAllocation) {
        let mut cfg = SystemConfig::reference(pmax_dbm, PhaseConstraint::Continuous).unwrap();
        cfg.user_antennas = vec![g.len()];
        cfg.amplifier_inefficiency.truncate(1);
        cfg.circuit_power.truncate(1);
        cfg.max_power.truncate(1);
        let frozen = FrozenDe {
            g: vec![DVector::from_column_slice(g)],
            const_bits: 0.0,
        };
        let p = cfg.max_power[0] / g.len() as f64;
        let alloc = PowerAllocation {
            powers: vec![DVector::from_element(g.len(), p)],
            directions: vec![CMatrix::identity(g.len(), g.len())],
        };
        (cfg, frozen, alloc)
    }

    #[test]
    fn optimal_y_cases() {
        assert_eq!(optimal_y(4.0, 4.0).unwrap(), 0.5);
        assert_eq!(optimal_y(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(optimal_y(9.0, 3.0).unwrap(), 1.0);
        assert!(optimal_y(1.0, 0.0).is_err());
    }

    #[test]
    fn directions_are_the_transmit_bases() {
        let cfg = SystemConfig::reference(20.0, PhaseConstraint::Continuous).unwrap();
        let model = generate_channel(&cfg, 3, RhoRange::default()).unwrap();
        let dirs = optimal_directions(&model);
        for (d, u) in dirs.iter().zip(&model.users) {
            assert_eq!(d, &u.v2);
            assert!(unitarity_error(d) <= 1e-10);
        }
        let mut id = model.clone();
        for u in &mut id.users {
            u.v2 = CMatrix::identity(2, 2);
        }
        assert!(optimal_directions(&id).iter().all(|d| *d == CMatrix::identity(2, 2)));
        let alloc = PowerAllocation::equal(&cfg, &model);
        for k in 0..cfg.num_users() {
            let q = alloc.covariance(k);
            let w = crate::linalg::hermitian_eig(&q).0;
            assert!(w.iter().all(|&x| x >= -1e-14));
        }
    }

    #[test]
    fn simplex_projection_cases() {
        let p = |v: &[f64], cap: f64| project_capped_simplex(&DVector::from_column_slice(v), cap);
        assert_eq!(p(&[0.2, -1.0], 1.0).as_slice(), &[0.2, 0.0]);
        assert_eq!(p(&[2.0, 0.0], 1.0).as_slice(), &[1.0, 0.0]);
        let v = p(&[0.8, 0.6], 1.0);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn simplex_projection_is_nearest(v in prop::collection::vec(-2.0f64..2.0, 1..6), cap in 0.01f64..3.0,
                                         probe in prop::collection::vec(0.0f64..1.0, 6)) {
            let x = DVector::from_vec(v.clone());
            let p = project_capped_simplex(&x, cap);
            prop_assert!(p.iter().all(|&a| a >= 0.0));
            prop_assert!(p.sum() <= cap);
            // any feasible point is no closer to x
            let mut q = DVector::from_fn(v.len(), |i, _| probe[i]);
            if q.sum() > cap { q *= cap / q.sum(); }
            prop_assert!((&x - &p).norm() <= (&x - &q).norm() + 1e-12);
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let frozen = FrozenDe {
            g: vec![DVector::from_column_slice(&[3.0, 0.5]), DVector::from_column_slice(&[40.0, 7.0, 0.2])],
            const_bits: 1.3,
        };
        let x = vec![DVector::from_column_slice(&[0.3, 0.1]), DVector::from_column_slice(&[0.05, 0.2, 0.7])];
        let grad = frozen.rate_gradient(&x);
        for k in 0..2 {
            for n in 0..x[k].len() {
                let h = 1e-6 * x[k][n];
                let mut up = x.clone();
                up[k][n] += h;
                let mut dn = x.clone();
                dn[k][n] -= h;
                let fd = (frozen.rate(&up) - frozen.rate(&dn)) / (2.0 * h);
                assert!((fd - grad[k][n]).abs() <= 1e-6 * grad[k][n].abs(), "{fd} vs {}", grad[k][n]);
            }
        }
    }

    #[test]
    fn f4_gradient_matches_finite_differences() {
        let (mut cfg, frozen, _) = one_user(&[50.0, 4.0], 20.0);
        cfg.beta = 0.7 * cfg.total_budget();
        let obj = Objective::new(&frozen, &cfg).unwrap();
        let x = vec![DVector::from_column_slice(&[0.03, 0.05])];
        let y = 0.2;
        let grad = obj.f4_gradient(&x, y);
        for n in 0..2 {
            let h = 1e-7;
            let mut up = x.clone();
            up[0][n] += h;
            let mut dn = x.clone();
            dn[0][n] -= h;
            let fd = (obj.f4(&up, y) - obj.f4(&dn, y)) / (2.0 * h);
            assert!((fd - grad[0][n]).abs() <= 1e-6 * grad[0][n].abs().max(1e-3), "{fd} vs {}", grad[0][n]);
        }
    }

    #[test]
    fn degenerate_objective_returns_warm_start() {
        let (cfg, frozen, _) = one_user(&[1.0, 0.1], 20.0);
        let warm = PowerAllocation {
            powers: vec![DVector::from_column_slice(&[0.01, 0.02])],
            directions: vec![CMatrix::identity(2, 2)],
        };
        let out = inner_concave_solve(&frozen, 0.0, &cfg, &warm, &InnerOptions::default()).unwrap();
        assert_eq!(out, warm);
    }

    #[test]
    fn large_beta_uses_full_budget() {
        let (mut cfg, frozen, alloc) = one_user(&[5.0], 20.0);
        cfg.beta = 100.0 * cfg.total_budget();
        let (out, _) = quadratic_transform_solve(&frozen, &cfg, &alloc, &QtOptions::default()).unwrap();
        assert!((out.trace(0) - cfg.max_power[0]).abs() <= 1e-9);
    }

    /// Exhaustive search over the 2-simplex `{a + b <= P}` on a 10^4 x 10^4 grid.
    fn grid_max(f: impl Fn(f64, f64) -> f64, cap: f64) -> f64 {
        let steps = 10_000;
        let h = cap / steps as f64;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                best = best.max(f(i as f64 * h, j as f64 * h));
            }
        }
        best
    }

    #[test]
    fn matches_grid_search_on_two_modes() {
        for pmax_dbm in [20.0, 35.0] {
            let (cfg, frozen, alloc) = one_user(&[1.0, 0.1], pmax_dbm);
            let obj = Objective::new(&frozen, &cfg).unwrap();
            let cap = cfg.max_power[0];
            let at = |a: f64, b: f64| vec![DVector::from_column_slice(&[a, b])];

            // inner problem at a fixed y
            let y = optimal_y(frozen.rate(&alloc.powers), obj.power(&alloc.powers)).unwrap();
            let out = inner_concave_solve(&frozen, y, &cfg, &alloc, &InnerOptions::default()).unwrap();
            let best = grid_max(|a, b| obj.f4(&at(a, b), y), cap);
            assert!(obj.f4(&out.powers, y) >= best - 1e-3, "inner at {pmax_dbm} dBm");

            // full fractional problem
            let (out, st) = quadratic_transform_solve(&frozen, &cfg, &alloc, &QtOptions::default()).unwrap();
            let best = grid_max(|a, b| obj.f3(&at(a, b)), cap);
            assert!(st.objective >= best - 1e-3, "{} vs grid {best}", st.objective);
            assert!(out.is_feasible(&cfg));
        }
    }

    fn table2_frozen(pmax_dbm: f64, beta_rel: f64) -> (SystemConfig, FrozenDe, PowerAllocation) {
        let mut cfg = SystemConfig::reference(pmax_dbm, PhaseConstraint::Continuous).unwrap();
        cfg.beta = beta_rel * cfg.total_budget();
        let model = generate_channel(&cfg, 5, RhoRange::default()).unwrap();
        let phi = CVector::from_fn(cfg.ris_elements, |i, _| C64::from_polar(1.0, 0.3 * i as f64));
        let alloc = PowerAllocation::equal(&cfg, &model);
        let st = de_fixed_point(&model, &phi, &alloc, cfg.noise_power, &DeOptions::default()).unwrap();
        (cfg, FrozenDe::from(&st), alloc)
    }

    #[test]
    fn qt_trace_is_monotone_and_short() {
        for (pmax, beta_rel) in [(0.0, 0.0), (20.0, 0.5), (40.0, 0.0), (30.0, 100.0)] {
            let (cfg, frozen, alloc) = table2_frozen(pmax, beta_rel);
            let (out, st) = quadratic_transform_solve(&frozen, &cfg, &alloc, &QtOptions::default()).unwrap();
            assert!(st.converged);
            assert!(st.iterations <= 5, "{} iterations at {pmax} dBm", st.iterations);
            for w in st.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "{:?}", st.trace);
            }
            assert!(out.is_feasible(&cfg));
        }
    }

    #[test]
    fn power_free_mode_takes_one_iteration() {
        let (mut cfg, frozen, alloc) = table2_frozen(30.0, 0.0);
        cfg.amplifier_inefficiency.iter_mut().for_each(|x| *x = 0.0);
        let (out, st) = quadratic_transform_solve(&frozen, &cfg, &alloc, &QtOptions::default()).unwrap();
        assert_eq!(st.iterations, 1);
        // SE maximization with every g > 0 spends the whole budget
        for k in 0..cfg.num_users() {
            assert!((out.trace(k) - cfg.max_power[k]).abs() <= 1e-6 * cfg.max_power[k]);
        }
    }

    #[test]
    fn stationary_start_stops_after_one_iteration() {
        let (cfg, frozen, alloc) = table2_frozen(20.0, 0.5);
        let (out, _) = quadratic_transform_solve(&frozen, &cfg, &alloc, &QtOptions::default()).unwrap();
        let (_, st) = quadratic_transform_solve(&frozen, &cfg, &out, &QtOptions::default()).unwrap();
        assert_eq!(st.iterations, 1);
    }
}
