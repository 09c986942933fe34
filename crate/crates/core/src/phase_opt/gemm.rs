//! Negative-square-penalty homotopy for `min f6a(phi)` over the phase set.
//!
//! The set is relaxed to its convex hull and the objective to
//! `f_lambda = f6a - lambda ||phi||^2`, whose concave part is linearized at
//! the anchor `phi_bar`:
//!
//! ```text
//! F(phi | phi_bar) = f6a(phi) - lambda (||phi_bar||^2 + 2 Re<phi_bar, phi - phi_bar>)
//! ```
//!
//! GEMM takes a single accelerated projected-gradient step per anchor;
//! exact MM runs APG on each majorant to convergence. Both raise `lambda`
//! geometrically until it passes the threshold that makes the relaxation
//! exact, then snap onto the phase set.

use std::f64::consts::PI;

use crate::config::PhaseConstraint;
use crate::linalg::{real_inner, spectral_norm_hermitian, CMatrix, CVector};
use crate::{Error, Result};

use super::projection::{project_vector, snap_vector};
use super::wmmse::f6a_eval;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GemmOptions {
    /// Steps per penalty level.
    pub j: usize,
    /// Penalty growth factor.
    pub c_mult: f64,
    /// Initial penalty as a fraction of the Lipschitz bound.
    pub lambda0_rel: f64,
    /// Stall threshold on `||phi_new - phi||`.
    pub eps: f64,
    pub power_iterations: usize,
    /// Exact MM only: APG stopping tolerance and iteration cap per majorant.
    pub inner_tol: f64,
    pub inner_max: usize,
}

impl Default for GemmOptions {
    fn default() -> Self {
        GemmOptions {
            j: 20,
            c_mult: 3.0,
            lambda0_rel: 1e-3,
            eps: 1e-6,
            power_iterations: 50,
            inner_tol: 1e-6,
            inner_max: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseStats {
    pub grad_evals: usize,
    /// Majorization steps (anchor updates).
    pub mm_steps: usize,
    pub final_lambda: f64,
    pub lambda_upp: f64,
}

const MAX_DOUBLINGS: usize = 60;

/// Problem data shared by both solvers.
struct Quadratic<'a> {
    q: &'a CMatrix,
    c: &'a CVector,
    c_conj: CVector,
    constraint: PhaseConstraint,
}

impl<'a> Quadratic<'a> {
    fn majorant(&self, x: &CVector, anchor: &CVector, lambda: f64) -> f64 {
        let an = anchor.norm_squared();
        f6a_eval(x, self.q, self.c) - lambda * (an + 2.0 * real_inner(anchor, &(x - anchor)))
    }

    fn gradient(&self, z: &CVector, anchor: &CVector, lambda: f64) -> CVector {
        gradient_f(z, anchor, self.q, &self.c_conj, lambda)
    }

    /// One projected step from `z` with backtracking on the curvature `beta`.
    /// Returns the new point and the accepted `beta`.
    fn step(&self, z: &CVector, anchor: &CVector, lambda: f64, beta_start: f64) -> Result<(CVector, f64, CVector)> {
        let grad = self.gradient(z, anchor, lambda);
        let fz = self.majorant(z, anchor, lambda);
        let mut beta = beta_start;
        for _ in 0..MAX_DOUBLINGS {
            let x = project_vector(&(z - &grad / crate::linalg::c(beta)), self.constraint);
            let d = &x - z;
            let bound = fz + real_inner(&grad, &d) + 0.5 * beta * d.norm_squared();
            let fx = self.majorant(&x, anchor, lambda);
            if fx <= bound + 1e-12 * (1.0 + fz.abs()) {
                return Ok((x, beta, grad));
            }
            beta *= 2.0;
        }
        Err(Error::LineSearch { doublings: MAX_DOUBLINGS })
    }
}

/// `2 Q z - 2 c* - 2 lambda phi_anchor`.
pub fn gradient_f(z: &CVector, anchor: &CVector, q: &CMatrix, c_conj: &CVector, lambda: f64) -> CVector {
    (q * z - c_conj - anchor * crate::linalg::c(lambda)) * crate::linalg::c(2.0)
}

/// `2 ||Q||_2 sqrt(N) + 2 ||c||`, a bound on the gradient of `f6a` over the hull.
pub fn lipschitz_bound(q: &CMatrix, c: &CVector, power_iterations: usize) -> f64 {
    2.0 * spectral_norm_hermitian(q, power_iterations) * (q.nrows() as f64).sqrt() + 2.0 * c.norm()
}

/// Penalty above which the relaxed problem has the same global minimizers.
pub fn lambda_threshold(lhat: f64, constraint: PhaseConstraint) -> f64 {
    match constraint {
        PhaseConstraint::Continuous => lhat,
        PhaseConstraint::Discrete { levels } => lhat / (PI / f64::from(levels)).sin(),
    }
}

fn nesterov(zeta_prev: &mut f64) -> f64 {
    let zeta = (1.0 + (1.0 + 4.0 * *zeta_prev * *zeta_prev).sqrt()) / 2.0;
    let alpha = (*zeta_prev - 1.0) / zeta;
    *zeta_prev = zeta;
    alpha
}

fn check(q: &CMatrix, c: &CVector, init: &CVector) -> Result<()> {
    if q.nrows() != q.ncols() || q.nrows() != c.len() || c.len() != init.len() {
        return Err(Error::dims("phase quadratic", c.len(), init.len()));
    }
    Ok(())
}

enum Inner {
    OneStep,
    Exact { tol: f64, max: usize },
}

fn homotopy(q: &CMatrix, c: &CVector, constraint: PhaseConstraint, init: &CVector, opts: &GemmOptions, inner: Inner) -> Result<(CVector, PhaseStats)> {
    check(q, c, init)?;
    let q_norm = spectral_norm_hermitian(q, opts.power_iterations);
    let lhat = 2.0 * q_norm * (q.nrows() as f64).sqrt() + 2.0 * c.norm();
    let mut stats = PhaseStats::default();
    if !(lhat > 0.0) {
        return Ok((snap_vector(init, constraint), stats));
    }
    let prob = Quadratic {
        q,
        c,
        c_conj: c.conjugate(),
        constraint,
    };
    let lambda_upp = lambda_threshold(lhat, constraint);
    let mut lambda = opts.lambda0_rel * lhat;
    let mut beta = if q_norm > 0.0 { 2.0 * q_norm } else { lhat };

    let mut phi = project_vector(init, constraint);
    let mut phi_prev = phi.clone();
    let mut zeta = 0.0;
    loop {
        for _ in 0..opts.j {
            let next = match inner {
                Inner::OneStep => {
                    let alpha = nesterov(&mut zeta);
                    let z = &phi + (&phi - &phi_prev) * crate::linalg::c(alpha);
                    let (x, b, _) = prob.step(&z, &phi, lambda, beta / 2.0)?;
                    beta = b;
                    stats.grad_evals += 1;
                    x
                }
                Inner::Exact { tol, max } => {
                    // APG on the majorant anchored at phi, restarted each time
                    let mut x = phi.clone();
                    let mut x_prev = phi.clone();
                    let mut zeta_in = 0.0;
                    for _ in 0..max {
                        let alpha = nesterov(&mut zeta_in);
                        let z = &x + (&x - &x_prev) * crate::linalg::c(alpha);
                        let (xn, b, _) = prob.step(&z, &phi, lambda, beta / 2.0)?;
                        beta = b;
                        stats.grad_evals += 1;
                        x_prev = std::mem::replace(&mut x, xn);
                        if (&x - &x_prev).norm() <= tol {
                            break;
                        }
                    }
                    x
                }
            };
            stats.mm_steps += 1;
            phi_prev = std::mem::replace(&mut phi, next);
            if (&phi - &phi_prev).norm() < opts.eps {
                lambda *= opts.c_mult;
            }
        }
        lambda *= opts.c_mult;
        if lambda >= lambda_upp {
            break;
        }
    }
    stats.final_lambda = lambda;
    stats.lambda_upp = lambda_upp;
    Ok((snap_vector(&phi, constraint), stats))
}

/// Penalty homotopy with one extrapolated projected-gradient step per
/// majorization.
pub fn nsp_gemm(q: &CMatrix, c: &CVector, constraint: PhaseConstraint, init: &CVector, opts: &GemmOptions) -> Result<(CVector, PhaseStats)> {
    homotopy(q, c, constraint, init, opts, Inner::OneStep)
}

/// Same homotopy, solving every majorant to APG convergence.
pub fn exact_mm(q: &CMatrix, c: &CVector, constraint: PhaseConstraint, init: &CVector, opts: &GemmOptions) -> Result<(CVector, PhaseStats)> {
    homotopy(
        q,
        c,
        constraint,
        init,
        opts,
        Inner::Exact {
            tol: opts.inner_tol,
            max: opts.inner_max,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_part;
    use crate::phase_opt::projection::{is_member, project};
    use crate::C64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn rand_problem(rng: &mut ChaCha8Rng, n: usize) -> (CMatrix, CVector) {
        let x = CMatrix::from_fn(n, n, |_, _| rand_c(rng));
        let q = hermitian_part(&(&x * x.adjoint()));
        let c = CVector::from_fn(n, |_, _| rand_c(rng));
        (q, c)
    }

    fn rand_hull_point(rng: &mut ChaCha8Rng, n: usize, k: PhaseConstraint) -> CVector {
        CVector::from_fn(n, |_, _| project(rand_c(rng) * crate::linalg::c(1.5), k))
    }

    fn penalized(q: &CMatrix, c: &CVector, x: &CVector, lambda: f64) -> f64 {
        f6a_eval(x, q, c) - lambda * x.norm_squared()
    }

    #[test]
    fn gradient_zero_case() {
        let z = CVector::zeros(3);
        let g = gradient_f(&z, &z, &CMatrix::identity(3, 3), &CVector::zeros(3), 2.0);
        assert_eq!(g, CVector::zeros(3));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for lambda in [0.0, 0.8] {
            for _ in 0..20 {
                let (q, c) = rand_problem(&mut rng, 5);
                let prob = Quadratic { q: &q, c: &c, c_conj: c.conjugate(), constraint: PhaseConstraint::Continuous };
                let z = CVector::from_fn(5, |_, _| rand_c(&mut rng));
                let anchor = CVector::from_fn(5, |_, _| rand_c(&mut rng));
                let g = prob.gradient(&z, &anchor, lambda);
                let h = 1e-6;
                for n in 0..5 {
                    for (dir, part) in [(C64::new(1.0, 0.0), 0), (C64::new(0.0, 1.0), 1)] {
                        let mut up = z.clone();
                        up[n] += dir * h;
                        let mut dn = z.clone();
                        dn[n] -= dir * h;
                        let fd = (prob.majorant(&up, &anchor, lambda) - prob.majorant(&dn, &anchor, lambda)) / (2.0 * h);
                        let want = if part == 0 { g[n].re } else { g[n].im };
                        assert!((fd - want).abs() <= 1e-6 * g.norm(), "{fd} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn majorant_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in [PhaseConstraint::Continuous, PhaseConstraint::Discrete { levels: 4 }] {
            for _ in 0..100 {
                let (q, c) = rand_problem(&mut rng, 4);
                let prob = Quadratic { q: &q, c: &c, c_conj: c.conjugate(), constraint: k };
                let lambda = rng.random_range(0.0..5.0);
                let x = rand_hull_point(&mut rng, 4, k);
                let bar = rand_hull_point(&mut rng, 4, k);
                assert!(prob.majorant(&x, &bar, lambda) >= penalized(&q, &c, &x, lambda) - 1e-8);
                assert!((prob.majorant(&bar, &bar, lambda) - penalized(&q, &c, &bar, lambda)).abs() <= 1e-8);
                // at phi = phi_bar both gradients are 2Q phi - 2c* - 2 lambda phi
                let gm = prob.gradient(&bar, &bar, lambda);
                let gf = (&q * &bar - c.conjugate() - &bar * crate::linalg::c(lambda)) * crate::linalg::c(2.0);
                assert!((gm - gf).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn unit_circle_output_for_pure_quadratic() {
        let n = 6;
        let (out, _) = nsp_gemm(&CMatrix::identity(n, n), &CVector::zeros(n), PhaseConstraint::Continuous,
                                &CVector::from_element(n, C64::new(0.3, 0.1)), &GemmOptions::default()).unwrap();
        assert!(out.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn zero_problem_returns_snapped_init() {
        let init = CVector::from_fn(3, |i, _| C64::new(0.2 * i as f64, 0.5));
        let k = PhaseConstraint::Discrete { levels: 4 };
        let (out, st) = nsp_gemm(&CMatrix::zeros(3, 3), &CVector::zeros(3), k, &init, &GemmOptions::default()).unwrap();
        assert_eq!(out, snap_vector(&init, k));
        assert_eq!(st.grad_evals, 0);
        let (out, _) = exact_mm(&CMatrix::zeros(3, 3), &CVector::zeros(3), k, &init, &GemmOptions::default()).unwrap();
        assert_eq!(out, snap_vector(&init, k));
    }

    fn brute_force(q: &CMatrix, c: &CVector, levels: u32) -> f64 {
        let n = c.len();
        let total = (levels as usize).pow(n as u32);
        let mut best = f64::INFINITY;
        for code in 0..total {
            let mut rest = code;
            let phi = CVector::from_fn(n, |_, _| {
                let m = (rest % levels as usize) as u32;
                rest /= levels as usize;
                PhaseConstraint::discrete_point(m, levels)
            });
            best = best.min(f6a_eval(&phi, q, c));
        }
        best
    }

    /// `Q = B o A^T` from two random PSD factors, as the WMMSE step builds it.
    pub(super) fn hadamard_problem(rng: &mut ChaCha8Rng, n: usize) -> (CMatrix, CVector) {
        let x = CMatrix::from_fn(n, n, |_, _| rand_c(rng));
        let y = CMatrix::from_fn(n, n, |_, _| rand_c(rng));
        let b = &x * x.adjoint();
        let a = &y * y.adjoint();
        let q = hermitian_part(&b.component_mul(&a.transpose()));
        let c = CVector::from_fn(n, |_, _| rand_c(rng));
        (q, c)
    }

    /// Exact hits and within-2% counts of `nsp_gemm` against enumeration.
    fn hit_rate(seed: u64, n: usize, levels: u32, trials: usize) -> (usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = PhaseConstraint::Discrete { levels };
        let (mut hits, mut close) = (0, 0);
        for _ in 0..trials {
            let (q, c) = hadamard_problem(&mut rng, n);
            let init = snap_vector(&CVector::from_element(n, C64::new(1.0, 0.0)), k);
            let (out, _) = nsp_gemm(&q, &c, k, &init, &GemmOptions::default()).unwrap();
            assert!(out.iter().all(|&z| is_member(z, k)));
            let best = brute_force(&q, &c, levels);
            let got = f6a_eval(&out, &q, &c);
            assert!(got >= best - 1e-9 * (1.0 + best.abs()));
            if got - best <= 1e-9 * (1.0 + best.abs()) {
                hits += 1;
            }
            if got - best <= 0.02 * best.abs() {
                close += 1;
            }
        }
        (hits, close)
    }

    // The homotopy path decides the vertex; it is not a global method. These
    // floors sit below the rates measured over 200 instances (about 93% for
    // N=2, tau=2 and 51% for N=4, tau=4) and guard against regressions only.
    #[test]
    fn two_elements_binary_mostly_hits_brute_force() {
        let (hits, _) = hit_rate(12, 2, 2, 200);
        assert!(hits >= 170, "{hits}/200");
    }

    #[test]
    fn four_elements_quaternary_hit_rate() {
        let (hits, close) = hit_rate(13, 4, 4, 200);
        assert!(hits >= 80, "{hits}/200 exact");
        assert!(close >= hits);
    }

    #[test]
    fn exact_mm_agrees_and_costs_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for k in [PhaseConstraint::Continuous, PhaseConstraint::Discrete { levels: 4 }] {
            let (q, c) = rand_problem(&mut rng, 16);
            let init = snap_vector(&CVector::from_element(16, C64::new(1.0, 0.0)), k);
            let (a, sa) = nsp_gemm(&q, &c, k, &init, &GemmOptions::default()).unwrap();
            let (b, sb) = exact_mm(&q, &c, k, &init, &GemmOptions::default()).unwrap();
            let (fa, fb) = (f6a_eval(&a, &q, &c), f6a_eval(&b, &q, &c));
            assert!((fa - fb).abs() <= 0.01 * fb.abs(), "{fa} vs {fb}");
            assert!(sb.grad_evals > sa.grad_evals);
            assert!(b.iter().all(|&z| is_member(z, k)));
        }
    }
}
