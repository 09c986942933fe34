//! Synthetic jointly correlated channels and seeded random draws.
//!
//! The UT-to-RIS channel of user `k` is `H2k = U2k * H~2k * V2k^H`, where
//! the eigenbases are deterministic and the entries of `H~2k` are independent
//! zero-mean complex Gaussians whose variances form the coupling matrix
//! `Omega_k`. The statistics come from separable exponential correlation
//! (`[R]_ij = rho^|i-j|`), which is a special case of that model.
//!
//! Path loss sits entirely on the RIS-to-BS matrix `H1` (per-entry variance
//! 1e-12, i.e. -120 dB); each `Omega_k` is normalized to unit average entry.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::SystemConfig;
use crate::linalg::{c, scale_rows, CMatrix, CVector};
use crate::{Error, Result, C64};

/// Per-entry variance of `H1`.
pub const H1_ENTRY_VARIANCE: f64 = 1e-12;

/// ChaCha stream reserved for channel generation; draws use the others.
const GENERATION_STREAM: u64 = u64::MAX;

/// Interval the per-user correlation exponents are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoRange {
    pub min: f64,
    pub max: f64,
}

impl Default for RhoRange {
    fn default() -> Self {
        RhoRange { min: 0.3, max: 0.9 }
    }
}

impl RhoRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&min) || !(0.0..1.0).contains(&max) || min > max {
            return Err(Error::config(
                "rho_min/rho_max",
                format!("[{min}, {max}] must be an interval inside [0, 1)"),
            ));
        }
        Ok(RhoRange { min, max })
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// Statistics of one user's UT-to-RIS channel.
#[derive(Debug, Clone, PartialEq)]
pub struct UserChannel {
    /// Receive eigenbasis, `N_R x N_R` unitary.
    pub u2: CMatrix,
    /// Transmit eigenbasis, `N_k x N_k` unitary.
    pub v2: CMatrix,
    /// Coupling matrix, `N_R x N_k`, entrywise nonnegative.
    pub omega: DMatrix<f64>,
}

/// Deterministic channel data shared by the whole optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    /// RIS-to-BS channel, `M x N_R`, known instantaneously.
    pub h1: CMatrix,
    pub users: Vec<UserChannel>,
}

/// One realization of the random inner matrices `H~2k`, one per user.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub h2: Vec<CMatrix>,
}

/// `[R]_ij = rho^|i-j|`.
pub fn exponential_correlation(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| rho.powi(i.abs_diff(j) as i32))
}

fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    C64::new(s * a, s * b)
}

/// Builds a synthetic channel model, deterministic in `(cfg, seed)`.
pub fn generate_channel(cfg: &SystemConfig, seed: u64, rho: RhoRange) -> Result<ChannelModel> {
    let (m, nr) = (cfg.bs_antennas, cfg.ris_elements);
    if m == 0 || nr == 0 || cfg.num_users() == 0 || cfg.user_antennas.contains(&0) {
        return Err(Error::config("dimensions", "M, N_R, K and every N_k must be >= 1"));
    }
    RhoRange::new(rho.min, rho.max)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATION_STREAM);

    let h1 = CMatrix::from_fn(m, nr, |_, _| complex_gaussian(&mut rng, H1_ENTRY_VARIANCE));

    let users = cfg
        .user_antennas
        .iter()
        .map(|&nk| {
            let rho_r = rho.sample(&mut rng);
            let rho_t = rho.sample(&mut rng);
            let rx = exponential_correlation(nr, rho_r).symmetric_eigen();
            let tx = exponential_correlation(nk, rho_t).symmetric_eigen();
            let lr = rx.eigenvalues.map(|x| x.max(0.0));
            let lt = tx.eigenvalues.map(|x| x.max(0.0));
            let mut omega = &lr * lt.transpose();
            let total: f64 = omega.sum();
            omega *= (nr * nk) as f64 / total;
            UserChannel {
                u2: rx.eigenvectors.map(c),
                v2: tx.eigenvectors.map(c),
                omega,
            }
        })
        .collect();

    Ok(ChannelModel { h1, users })
}

impl ChannelModel {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn bs_antennas(&self) -> usize {
        self.h1.nrows()
    }

    pub fn ris_elements(&self) -> usize {
        self.h1.ncols()
    }

    /// Checks the model against a configuration's dimensions.
    pub fn check_dims(&self, cfg: &SystemConfig) -> Result<()> {
        if self.bs_antennas() != cfg.bs_antennas || self.ris_elements() != cfg.ris_elements {
            return Err(Error::dims(
                "channel H1",
                format!("{}x{}", cfg.bs_antennas, cfg.ris_elements),
                format!("{}x{}", self.bs_antennas(), self.ris_elements()),
            ));
        }
        if self.num_users() != cfg.num_users() {
            return Err(Error::dims("user count", cfg.num_users(), self.num_users()));
        }
        for (u, &nk) in self.users.iter().zip(&cfg.user_antennas) {
            if u.v2.nrows() != nk || u.omega.ncols() != nk {
                return Err(Error::dims("user antennas", nk, u.v2.nrows()));
            }
        }
        Ok(())
    }

    /// `U_Gk = H1 diag(phi) U2k` for every user.
    pub fn cascaded_bases(&self, phi: &CVector) -> Vec<CMatrix> {
        let h1_phi = scale_cols(&self.h1, phi);
        self.users.iter().map(|u| &h1_phi * &u.u2).collect()
    }
}

/// `m * diag(d)`.
pub(crate) fn scale_cols(m: &CMatrix, d: &CVector) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[j])
}

/// Draws `H~2k` for all users. Entry `(n, m)` of user `k` has variance
/// `[Omega_k]_{n,m}` and comes from the substream keyed by
/// `(seed, draw_index, k)`, so draws can be generated in any order.
pub fn draw_h2(model: &ChannelModel, seed: u64, draw_index: u64) -> ChannelDraw {
    let h2 = model
        .users
        .iter()
        .enumerate()
        .map(|(k, user)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((draw_index << 16) | k as u64);
            CMatrix::from_fn(user.omega.nrows(), user.omega.ncols(), |n, m| {
                complex_gaussian(&mut rng, user.omega[(n, m)])
            })
        })
        .collect();
    ChannelDraw { h2 }
}

/// The end-to-end channel of user `k`: `H1 diag(phi) U2k H~2k V2k^H`.
pub fn effective_channel(
    model: &ChannelModel,
    phi: &CVector,
    draw: &ChannelDraw,
    k: usize,
) -> Result<CMatrix> {
    let user = model
        .users
        .get(k)
        .ok_or_else(|| Error::dims("user index", format!("< {}", model.num_users()), k))?;
    let h2 = draw
        .h2
        .get(k)
        .ok_or_else(|| Error::dims("draw user index", format!("< {}", draw.h2.len()), k))?;
    if phi.len() != model.ris_elements() {
        return Err(Error::dims("phase vector", model.ris_elements(), phi.len()));
    }
    if h2.nrows() != user.u2.ncols() || h2.ncols() != user.v2.ncols() {
        return Err(Error::dims(
            "H~2k",
            format!("{}x{}", user.u2.ncols(), user.v2.ncols()),
            format!("{}x{}", h2.nrows(), h2.ncols()),
        ));
    }
    let reflected = scale_rows(phi, &(&user.u2 * h2));
    Ok(&model.h1 * reflected * user.v2.adjoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PhaseConstraint;
    use crate::linalg::{frobenius, unitarity_error};

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::reference(20.0, PhaseConstraint::Continuous).unwrap();
        cfg.ris_elements = 6;
        cfg.bs_antennas = 3;
        cfg.user_antennas = vec![2, 3];
        cfg.amplifier_inefficiency.truncate(2);
        cfg.circuit_power.truncate(2);
        cfg.max_power.truncate(2);
        cfg
    }

    #[test]
    fn identity_correlation_gives_identity_bases() {
        let model = generate_channel(&small_cfg(), 3, RhoRange::new(0.0, 0.0).unwrap()).unwrap();
        for u in &model.users {
            let nr = u.u2.nrows();
            let nk = u.v2.nrows();
            assert!(frobenius(&(&u.u2 - CMatrix::identity(nr, nr))) < 1e-12);
            assert!(frobenius(&(&u.v2 - CMatrix::identity(nk, nk))) < 1e-12);
            assert!(u.omega.iter().all(|&w| (w - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn generated_model_invariants() {
        let cfg = small_cfg();
        for seed in 0..5 {
            let model = generate_channel(&cfg, seed, RhoRange::default()).unwrap();
            model.check_dims(&cfg).unwrap();
            for u in &model.users {
                assert!(unitarity_error(&u.u2) <= 1e-10);
                assert!(unitarity_error(&u.v2) <= 1e-10);
                assert!(u.omega.iter().all(|&w| w >= 0.0));
                let total = (u.omega.nrows() * u.omega.ncols()) as f64;
                assert!((u.omega.sum() - total).abs() <= 1e-12 * total);
            }
        }
    }

    #[test]
    fn correlation_eigendecomposition_reconstructs() {
        for rho in [0.0, 0.3, 0.9, 0.99] {
            let r = exponential_correlation(8, rho);
            let eig = r.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&w| w > -1e-12));
            assert!((eig.recompose() - r).norm() <= 1e-8);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_channel(&cfg, 11, RhoRange::default()).unwrap();
        let b = generate_channel(&cfg, 11, RhoRange::default()).unwrap();
        assert_eq!(a, b);
        let other = generate_channel(&cfg, 12, RhoRange::default()).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_degenerate_dims() {
        let mut cfg = small_cfg();
        cfg.ris_elements = 0;
        assert!(generate_channel(&cfg, 0, RhoRange::default()).is_err());
        let mut cfg = small_cfg();
        cfg.user_antennas[1] = 0;
        assert!(generate_channel(&cfg, 0, RhoRange::default()).is_err());
    }

    #[test]
    fn draws_are_keyed_and_zero_variance_is_zero() {
        let mut model = generate_channel(&small_cfg(), 5, RhoRange::default()).unwrap();
        assert_eq!(draw_h2(&model, 9, 4), draw_h2(&model, 9, 4));
        assert_ne!(draw_h2(&model, 9, 4), draw_h2(&model, 9, 5));
        let d = draw_h2(&model, 9, 4);
        assert_ne!(d.h2[0].column(0), d.h2[1].column(0));

        for u in &mut model.users {
            u.omega.fill(0.0);
        }
        let d = draw_h2(&model, 1, 0);
        assert!(d.h2.iter().all(|h| h.iter().all(|z| *z == C64::new(0.0, 0.0))));
    }

    #[test]
    fn draw_second_moment_matches_omega() {
        let model = generate_channel(&small_cfg(), 2, RhoRange::default()).unwrap();
        let n = 100_000;
        let user = &model.users[0];
        let mut acc = DMatrix::<f64>::zeros(user.omega.nrows(), user.omega.ncols());
        for i in 0..n {
            let d = draw_h2(&model, 77, i);
            acc += d.h2[0].map(|z| z.norm_sqr());
        }
        acc /= n as f64;
        for (got, want) in acc.iter().zip(user.omega.iter()) {
            assert!((got - want).abs() <= 0.02 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn effective_channel_scalar_and_zero_cases() {
        let model = ChannelModel {
            h1: CMatrix::from_element(1, 1, c(1.0)),
            users: vec![UserChannel {
                u2: CMatrix::identity(1, 1),
                v2: CMatrix::identity(1, 1),
                omega: DMatrix::from_element(1, 1, 1.0),
            }],
        };
        let h = C64::new(0.3, -1.2);
        let draw = ChannelDraw {
            h2: vec![CMatrix::from_element(1, 1, h)],
        };
        let one = CVector::from_element(1, c(1.0));
        assert_eq!(effective_channel(&model, &one, &draw, 0).unwrap()[(0, 0)], h);
        let zero = CVector::zeros(1);
        assert_eq!(effective_channel(&model, &zero, &draw, 0).unwrap()[(0, 0)], c(0.0));
        assert!(effective_channel(&model, &CVector::zeros(2), &draw, 0).is_err());
        assert!(effective_channel(&model, &one, &draw, 1).is_err());
    }

    #[test]
    fn transmit_basis_only_rotates() {
        let cfg = small_cfg();
        let mut model = generate_channel(&cfg, 8, RhoRange::default()).unwrap();
        let phi = CVector::from_fn(cfg.ris_elements, |i, _| C64::from_polar(1.0, 0.4 * i as f64));
        let draw = draw_h2(&model, 1, 0);
        let sv = |m: &CMatrix| {
            let mut s: Vec<f64> = m.clone().singular_values().iter().cloned().collect();
            s.sort_by(f64::total_cmp);
            s
        };
        let before = sv(&effective_channel(&model, &phi, &draw, 1).unwrap());
        let nk = model.users[1].v2.nrows();
        model.users[1].v2 = CMatrix::identity(nk, nk);
        let after = sv(&effective_channel(&model, &phi, &draw, 1).unwrap());
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() <= 1e-9 * before.last().unwrap());
        }
    }
}
