//! RIS phase optimization: WMMSE block-coordinate descent whose phase step
//! is solved by the penalty homotopy in [`gemm`].

pub mod gemm;
pub mod projection;
pub mod wmmse;

use nalgebra::DVector;

use crate::channel::ChannelModel;
use crate::config::PhaseConstraint;
use crate::linalg::{frobenius, CVector};
use crate::{Error, Result, C64};

pub use gemm::{exact_mm, gradient_f, lambda_threshold, lipschitz_bound, nsp_gemm, GemmOptions, PhaseStats};
pub use projection::{project_cps, project_dps, snap};
pub use wmmse::{build_a, f5, f6a_eval, mse_matrix, wmmse_closed_forms, WmmseState};

/// Reflection coefficients together with their feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    pub phi: CVector,
    pub constraint: PhaseConstraint,
}

impl PhaseVector {
    /// Every coefficient at the set member nearest to `1`.
    pub fn initial(n: usize, constraint: PhaseConstraint) -> Self {
        PhaseVector {
            phi: CVector::from_element(n, snap(C64::new(1.0, 0.0), constraint)),
            constraint,
        }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Exact membership of every coefficient in the phase set.
    pub fn is_feasible(&self) -> bool {
        self.phi.iter().all(|&z| projection::is_member(z, self.constraint))
    }

    /// Largest angle/modulus residual against the phase set.
    pub fn max_residual(&self) -> f64 {
        self.phi.iter().map(|&z| self.constraint.residual(z)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseSolver {
    #[default]
    Gemm,
    ExactMm,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    /// Relative change of `f5` that ends the loop.
    pub eps: f64,
    pub max_iter: usize,
    pub solver: PhaseSolver,
    pub gemm: GemmOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        BcdOptions {
            eps: 1e-4,
            max_iter: 100,
            solver: PhaseSolver::Gemm,
            gemm: GemmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BcdTrace {
    /// `f5` at the start and after every iteration.
    pub f5: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose phase-step output raised `f6a` and was discarded.
    pub rejected: usize,
    pub grad_evals: usize,
    pub converged: bool,
}

/// Alternates the closed-form receiver/weight with the phase step until the
/// log-det objective settles.
///
/// A phase-step output is only accepted if it does not increase `f6a`; that
/// is what keeps `f5` non-decreasing, since the homotopy itself can land on a
/// worse vertex than its starting point.
pub fn wmmse_bcd(
    model: &ChannelModel,
    psi: &[DVector<f64>],
    noise_power: f64,
    init: &PhaseVector,
    opts: &BcdOptions,
) -> Result<(PhaseVector, BcdTrace)> {
    if init.len() != model.ris_elements() {
        return Err(Error::dims("phase vector", model.ris_elements(), init.len()));
    }
    let a = build_a(model, psi)?;
    let h1 = &model.h1;
    let mut phi = init.phi.clone();
    let mut f = f5(h1, &phi, &a, noise_power)?;
    let mut trace = BcdTrace {
        f5: vec![f],
        ..BcdTrace::default()
    };
    if frobenius(&a) == 0.0 {
        trace.iterations = 1;
        trace.f5.push(f);
        trace.converged = true;
        return Ok((init.clone(), trace));
    }
    while trace.iterations < opts.max_iter {
        trace.iterations += 1;
        let st = wmmse_closed_forms(h1, &phi, &a, noise_power)?;
        let q = st.quadratic();
        let (cand, stats) = match opts.solver {
            PhaseSolver::Gemm => nsp_gemm(&q, &st.c, init.constraint, &phi, &opts.gemm)?,
            PhaseSolver::ExactMm => exact_mm(&q, &st.c, init.constraint, &phi, &opts.gemm)?,
        };
        trace.grad_evals += stats.grad_evals;
        if f6a_eval(&cand, &q, &st.c) <= f6a_eval(&phi, &q, &st.c) {
            phi = cand;
        } else {
            trace.rejected += 1;
        }
        let next = f5(h1, &phi, &a, noise_power)?;
        trace.f5.push(next);
        let delta = (next - f).abs();
        f = next;
        if delta <= opts.eps * f.abs().max(f64::MIN_POSITIVE) {
            trace.converged = true;
            break;
        }
    }
    Ok((
        PhaseVector {
            phi,
            constraint: init.constraint,
        },
        trace,
    ))
}
