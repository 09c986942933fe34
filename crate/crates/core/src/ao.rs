//! Outer alternating optimization over the power allocation and the RIS
//! phases, its SE/EE specializations, the two reference baselines and a
//! grid sweep.
//!
//! Each outer iteration refreshes the DE auxiliaries, updates the powers by
//! the quadratic transform, refreshes the DE again and then updates the
//! phases by WMMSE block-coordinate descent. Both block solvers maximize a
//! surrogate of the DE objective, so each block output is kept only if the
//! DE objective did not drop.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::channel::ChannelModel;
use crate::config::{PhaseConstraint, SystemConfig};
use crate::det_equiv::{de_fixed_point, DeOptions, DeState};
use crate::linalg::CVector;
use crate::metrics::{ergodic_se_mc, total_power, MetricReport, PowerAllocation};
use crate::phase_opt::projection::snap_vector;
use crate::phase_opt::{wmmse_bcd, BcdOptions, PhaseVector};
use crate::power_alloc::{optimal_directions, quadratic_transform_solve, FrozenDe, QtOptions};
use crate::units::dbm_to_watt;
use crate::{Error, Result};

/// What the outer loop maximizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// `SE/P + beta SE/P_tot` with the given absolute `beta`.
    Re(f64),
    /// `beta = 0`.
    Ee,
    /// Amplifier inefficiencies zeroed while optimizing, so the consumed
    /// power no longer depends on the allocation.
    Se,
}

impl Mode {
    /// RE mode with `beta = ratio * P_tot`.
    pub fn re_over_ptot(ratio: f64, cfg: &SystemConfig) -> Self {
        Mode::Re(ratio * cfg.total_budget())
    }

    /// Config whose RE is reported for this mode.
    pub fn report_config(&self, cfg: &SystemConfig) -> SystemConfig {
        let mut c = cfg.clone();
        match *self {
            Mode::Re(beta) => c.beta = beta,
            Mode::Ee => c.beta = 0.0,
            Mode::Se => {}
        }
        c
    }

    /// Config the block solvers see. Bypasses validation for SE mode, where
    /// `xi = 0` is deliberately out of the physical range.
    pub fn objective_config(&self, cfg: &SystemConfig) -> SystemConfig {
        let mut c = self.report_config(cfg);
        if *self == Mode::Se {
            c.amplifier_inefficiency = vec![0.0; c.num_users()];
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Relative change of the objective that ends the outer loop.
    pub eps: f64,
    pub max_outer: usize,
    /// Monte-Carlo draws for validating the final iterate.
    pub mc_draws: usize,
    pub mc_seed: u64,
    /// Also estimate the ergodic SE after every outer iteration.
    pub mc_each_iteration: bool,
    pub de: DeOptions,
    pub qt: QtOptions,
    pub bcd: BcdOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps: 1e-4,
            max_outer: 50,
            mc_draws: 1000,
            mc_seed: 0,
            mc_each_iteration: false,
            de: DeOptions::default(),
            qt: QtOptions::default(),
            bcd: BcdOptions::default(),
        }
    }
}

/// State after one outer iteration (or the initial point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub de_se: f64,
    pub mc_se: Option<f64>,
    /// bits/Joule, from the DE SE.
    pub ee: f64,
    /// RE of the report config, from the DE SE.
    pub re: f64,
    /// The quantity the mode maximizes, from the DE SE.
    pub objective: f64,
    /// Final quadratic-transform objective of the power step.
    pub f3: f64,
    /// Final log-det objective of the phase step.
    pub f5: f64,
    pub power_accepted: bool,
    pub phase_accepted: bool,
    pub qt_iterations: usize,
    pub bcd_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub mode: Mode,
    pub alloc: PowerAllocation,
    pub phi: PhaseVector,
    pub initial: TracePoint,
    /// One entry per outer iteration.
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    pub converged: bool,
    /// Metrics of the final iterate from the DE SE.
    pub de_metrics: MetricReport,
    /// Metrics of the final iterate from the Monte-Carlo SE.
    pub mc_metrics: MetricReport,
    pub wall_time: Duration,
}

/// A sub-solver failure together with the iterations completed before it.
#[derive(Debug, thiserror::Error)]
#[error("outer iteration {iteration}: {source}")]
pub struct SolveError {
    pub iteration: usize,
    #[source]
    pub source: Error,
    pub partial: Vec<TracePoint>,
}

struct Evaluator<'a> {
    model: &'a ChannelModel,
    report: SystemConfig,
    objective: SystemConfig,
    opts: &'a SolveOptions,
}

impl Evaluator<'_> {
    fn de(&self, phi: &CVector, alloc: &PowerAllocation) -> Result<DeState> {
        de_fixed_point(self.model, phi, alloc, self.report.noise_power, &self.opts.de)
    }

    fn objective(&self, se: f64, alloc: &PowerAllocation) -> f64 {
        let p = total_power(&self.objective, alloc);
        se / p + self.objective.beta * se / self.objective.total_budget()
    }

    fn point(&self, st: &DeState, phi: &CVector, alloc: &PowerAllocation) -> Result<TracePoint> {
        let m = MetricReport::new(&self.report, st.se_bits, alloc)?;
        let mc_se = if self.opts.mc_each_iteration {
            Some(self.mc(phi, alloc)?)
        } else {
            None
        };
        Ok(TracePoint {
            de_se: st.se_bits,
            mc_se,
            ee: m.ee,
            re: m.re,
            objective: self.objective(st.se_bits, alloc),
            f3: f64::NAN,
            f5: f64::NAN,
            power_accepted: false,
            phase_accepted: false,
            qt_iterations: 0,
            bcd_iterations: 0,
        })
    }

    fn mc(&self, phi: &CVector, alloc: &PowerAllocation) -> Result<f64> {
        ergodic_se_mc(self.model, phi, alloc, self.report.noise_power, self.opts.mc_draws, self.opts.mc_seed)
    }
}

/// Which blocks the outer loop updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Blocks {
    power: bool,
    phase: bool,
}

/// Joint power/phase optimization from equal power and the all-ones phase
/// vector snapped onto the phase set.
pub fn solve(model: &ChannelModel, cfg: &SystemConfig, mode: Mode, opts: &SolveOptions) -> std::result::Result<SolveReport, SolveError> {
    let init = initial_point(model, cfg);
    run(model, cfg, mode, opts, init, Blocks { power: true, phase: true })
}

/// Same as [`solve`] but starting the phases from `phi0` snapped onto the
/// configured phase set. Discrete sets need this: every vertex start is a
/// fixed point of the phase step, so a discrete run never leaves its start.
pub fn solve_from(model: &ChannelModel, cfg: &SystemConfig, mode: Mode, opts: &SolveOptions, phi0: &CVector) -> std::result::Result<SolveReport, SolveError> {
    let (alloc, mut phi) = initial_point(model, cfg);
    if phi0.len() != phi.len() {
        return Err(SolveError {
            iteration: 0,
            source: Error::dims("initial phases", phi.len(), phi0.len()),
            partial: Vec::new(),
        });
    }
    phi.phi = snap_vector(phi0, cfg.phase);
    run(model, cfg, mode, opts, (alloc, phi), Blocks { power: true, phase: true })
}

fn initial_point(model: &ChannelModel, cfg: &SystemConfig) -> (PowerAllocation, PhaseVector) {
    let mut alloc = PowerAllocation::equal(cfg, model);
    alloc.directions = optimal_directions(model);
    (alloc, PhaseVector::initial(cfg.ris_elements, cfg.phase))
}

fn run(
    model: &ChannelModel,
    cfg: &SystemConfig,
    mode: Mode,
    opts: &SolveOptions,
    (mut alloc, mut phi): (PowerAllocation, PhaseVector),
    blocks: Blocks,
) -> std::result::Result<SolveReport, SolveError> {
    let start = Instant::now();
    let mut trace = Vec::new();
    let fail = |iteration: usize, source: Error, trace: &Vec<TracePoint>| SolveError {
        iteration,
        source,
        partial: trace.clone(),
    };

    let setup = || -> Result<Evaluator> {
        cfg.validate()?;
        model.check_dims(cfg)?;
        if let Mode::Re(beta) = mode {
            if !(beta.is_finite() && beta >= 0.0) {
                return Err(Error::config("beta", format!("{beta} must be >= 0")));
            }
        }
        if !(opts.eps > 0.0) || opts.max_outer == 0 {
            return Err(Error::InvalidArgument("eps must be > 0 and max_outer >= 1".into()));
        }
        Ok(Evaluator {
            model,
            report: mode.report_config(cfg),
            objective: mode.objective_config(cfg),
            opts,
        })
    };
    let ev = setup().map_err(|e| fail(0, e, &trace))?;

    let mut state = ev.de(&phi.phi, &alloc).map_err(|e| fail(0, e, &trace))?;
    let initial = ev.point(&state, &phi.phi, &alloc).map_err(|e| fail(0, e, &trace))?;
    let mut current = initial.objective;
    let mut converged = false;

    while trace.len() < opts.max_outer {
        let t = trace.len() + 1;
        let step = |alloc: &mut PowerAllocation, phi: &mut PhaseVector, state: &mut DeState| -> Result<TracePoint> {
            let mut f3 = f64::NAN;
            let mut f5 = f64::NAN;
            let mut qt_iterations = 0;
            let mut bcd_iterations = 0;
            let mut power_accepted = false;
            let mut phase_accepted = false;
            let mut obj = current;

            if blocks.power {
                let frozen = FrozenDe::from(&*state);
                let (cand, qt) = quadratic_transform_solve(&frozen, &ev.objective, alloc, &opts.qt)?;
                f3 = qt.objective;
                qt_iterations = qt.iterations;
                let refreshed = ev.de(&phi.phi, &cand)?;
                let value = ev.objective(refreshed.se_bits, &cand);
                if value >= obj {
                    *alloc = cand;
                    *state = refreshed;
                    obj = value;
                    power_accepted = true;
                } else {
                    log::debug!("outer {t}: power step lowered the objective ({value:.6e} < {obj:.6e}); kept previous");
                }
            }

            if blocks.phase {
                let (cand, bcd) = wmmse_bcd(model, &state.psi, ev.report.noise_power, phi, &opts.bcd)?;
                f5 = bcd.f5.last().copied().unwrap_or(f64::NAN);
                bcd_iterations = bcd.iterations;
                let refreshed = ev.de(&cand.phi, alloc)?;
                let value = ev.objective(refreshed.se_bits, alloc);
                if value >= obj {
                    *phi = cand;
                    *state = refreshed;
                    phase_accepted = true;
                } else {
                    log::debug!("outer {t}: phase step lowered the objective ({value:.6e} < {obj:.6e}); kept previous");
                }
            }

            let mut p = ev.point(state, &phi.phi, alloc)?;
            p.f3 = f3;
            p.f5 = f5;
            p.qt_iterations = qt_iterations;
            p.bcd_iterations = bcd_iterations;
            p.power_accepted = power_accepted;
            p.phase_accepted = phase_accepted;
            Ok(p)
        };
        let p = step(&mut alloc, &mut phi, &mut state).map_err(|e| fail(t, e, &trace))?;
        let delta = (p.objective - current).abs();
        current = p.objective;
        trace.push(p);
        if delta <= opts.eps * current.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let iterations = trace.len();
    let finish = || -> Result<(MetricReport, MetricReport)> {
        let de_metrics = MetricReport::new(&ev.report, state.se_bits, &alloc)?;
        let mc_metrics = MetricReport::new(&ev.report, ev.mc(&phi.phi, &alloc)?, &alloc)?;
        Ok((de_metrics, mc_metrics))
    };
    let (de_metrics, mc_metrics) = finish().map_err(|e| fail(iterations, e, &trace))?;
    Ok(SolveReport {
        mode,
        alloc,
        phi,
        initial,
        trace,
        iterations,
        converged,
        de_metrics,
        mc_metrics,
        wall_time: start.elapsed(),
    })
}

/// Reference schemes with the RIS left at its initial phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Phases fixed, powers optimized by the outer loop's power block.
    IdentityPhiOptPower,
    /// Phases fixed, every user splits its full budget evenly.
    IdentityPhiEqualPower,
}

pub fn baseline(
    model: &ChannelModel,
    cfg: &SystemConfig,
    which: Baseline,
    mode: Mode,
    opts: &SolveOptions,
) -> std::result::Result<SolveReport, SolveError> {
    let init = initial_point(model, cfg);
    match which {
        Baseline::IdentityPhiOptPower => run(model, cfg, mode, opts, init, Blocks { power: true, phase: false }),
        Baseline::IdentityPhiEqualPower => {
            let opts = SolveOptions { max_outer: 1, ..*opts };
            let mut r = run(model, cfg, mode, &opts, init, Blocks { power: false, phase: false })?;
            r.converged = true;
            Ok(r)
        }
    }
}

/// One grid coordinate of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridValue {
    /// Same per-user budget for every user, dBm.
    PmaxDbm(f64),
    /// RE mode with `beta = ratio * P_tot`; overrides the sweep's mode.
    BetaOverPtot(f64),
    /// Phase resolution in bits; 0 selects continuous phases.
    Bits(u32),
}

impl GridValue {
    pub fn value(&self) -> f64 {
        match *self {
            GridValue::PmaxDbm(v) | GridValue::BetaOverPtot(v) => v,
            GridValue::Bits(b) => f64::from(b),
        }
    }

    /// Applies the coordinate to a base config and mode.
    pub fn apply(&self, cfg: &SystemConfig, mode: Mode) -> Result<(SystemConfig, Mode)> {
        match *self {
            GridValue::PmaxDbm(dbm) => Ok((cfg.with_max_power(dbm_to_watt(dbm)), mode)),
            GridValue::BetaOverPtot(r) => {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::config("beta_over_ptot", format!("{r} must be >= 0")));
                }
                Ok((cfg.clone(), Mode::re_over_ptot(r, cfg)))
            }
            GridValue::Bits(0) => Ok((cfg.with_phase(PhaseConstraint::Continuous)?, mode)),
            GridValue::Bits(b) => Ok((cfg.with_phase(PhaseConstraint::from_bits(b)?)?, mode)),
        }
    }
}

#[derive(Debug)]
pub struct GridPoint {
    pub value: GridValue,
    pub outcome: std::result::Result<SolveReport, SolveError>,
}

/// Solves every grid point on the same channel realization. Points run
/// concurrently; results come back in grid order and a failing point does
/// not stop the others.
pub fn sweep(model: &ChannelModel, cfg: &SystemConfig, mode: Mode, grid: &[GridValue], opts: &SolveOptions) -> Result<Vec<GridPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    Ok(grid
        .par_iter()
        .map(|&value| {
            let outcome = value
                .apply(cfg, mode)
                .map_err(|source| SolveError { iteration: 0, source, partial: Vec::new() })
                .and_then(|(c, m)| solve(model, &c, m, opts));
            GridPoint { value, outcome }
        })
        .collect())
}
