use std::fs;
use std::io::{self, Write};

use rayon::prelude::*;
use risopt::channel::generate_channel;
use risopt::config::ConfigFile;
use risopt::units::{dbm_to_watt, watt_to_dbm};
use risopt::{baseline, solve, Baseline, ChannelModel, Error, Mode, PhaseConstraint, RhoRange, SolveError, SolveOptions, SolveReport, SystemConfig};

use crate::args::{Cli, Command, Common, ModeArg, PhaseArg};
use crate::grid::parse_grid;
use crate::output::{partial_sink, sink, summary_row, write_trace, SUMMARY_HEADER, TRACE_HEADER};

const DEFAULT_TRADEOFF: [f64; 3] = [0.01, 0.5, 100.0];
const DEFAULT_GRID: &str = "0:5:40";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

fn core_err(e: Error) -> CliError {
    match e {
        Error::InvalidConfig { .. } => CliError::Config(e.to_string()),
        other => CliError::Solver(other.to_string()),
    }
}

fn solve_err(e: &SolveError) -> CliError {
    match e.source {
        Error::InvalidConfig { .. } => CliError::Config(e.to_string()),
        _ => CliError::Solver(e.to_string()),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// How each point's mode is derived from its config.
#[derive(Debug, Clone, Copy)]
enum ModeSpec {
    Fixed(Mode),
    /// RE with `beta = ratio * P_tot` of the point's own budget.
    Ratio(f64),
    /// RE with the absolute `beta` of the config.
    ConfigBeta,
}

impl ModeSpec {
    fn resolve(self, cfg: &SystemConfig) -> Mode {
        match self {
            ModeSpec::Fixed(m) => m,
            ModeSpec::Ratio(r) => Mode::re_over_ptot(r, cfg),
            ModeSpec::ConfigBeta => Mode::Re(cfg.beta),
        }
    }
}

struct Loaded {
    cfg: SystemConfig,
    rho: RhoRange,
    /// `beta_over_ptot` as written in the config file.
    ratio: Option<f64>,
}

struct Point {
    experiment: String,
    grid_value: f64,
    cfg: SystemConfig,
    mode: Mode,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.common.jobs {
        Some(0) => Err(usage("--jobs must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(format!("--jobs: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let c = &cli.common;
    let Loaded { cfg, rho, ratio } = load_config(c)?;
    let model = generate_channel(&cfg, c.seed, rho).map_err(core_err)?;
    let default_draws = if cli.command == Command::ValidateDe { 2000 } else { 1000 };
    let opts = solve_options(c, default_draws)?;
    match cli.command {
        Command::Solve => cmd_solve(c, &cfg, &model, &opts, mode_spec(c, ratio)?),
        Command::Convergence => cmd_convergence(c, &cfg, &model, &opts, mode_spec(c, ratio)?),
        Command::Sweep => {
            let spec = mode_spec(c, ratio)?;
            let label = format!("sweep-{}", mode_name(c.mode));
            let points = grid_points(c, &cfg, DEFAULT_GRID)?
                .into_iter()
                .map(|(v, p)| Point {
                    experiment: label.clone(),
                    grid_value: v,
                    mode: spec.resolve(&p),
                    cfg: p,
                })
                .collect();
            run_points(c, points, &model, &opts, solve)
        }
        Command::Tradeoff => {
            if c.mode != ModeArg::Re {
                return Err(usage("tradeoff always runs --mode re"));
            }
            let ratios = if c.beta_over_ptot.is_empty() { DEFAULT_TRADEOFF.to_vec() } else { c.beta_over_ptot.clone() };
            for &r in &ratios {
                check_ratio(r)?;
            }
            let grid = grid_points(c, &cfg, DEFAULT_GRID)?;
            let points = ratios
                .iter()
                .flat_map(|&r| {
                    grid.iter().map(move |(v, p)| Point {
                        experiment: format!("tradeoff-beta_over_ptot={r}"),
                        grid_value: *v,
                        mode: Mode::re_over_ptot(r, p),
                        cfg: p.clone(),
                    })
                })
                .collect();
            run_points(c, points, &model, &opts, solve)
        }
        Command::ValidateDe => {
            let spec = mode_spec(c, ratio)?;
            let default = format!("{}", watt_to_dbm(cfg.max_power[0]));
            let points: Vec<Point> = grid_points(c, &cfg, &default)?
                .into_iter()
                .map(|(v, p)| Point {
                    experiment: "validate-de".into(),
                    grid_value: v,
                    mode: spec.resolve(&p),
                    cfg: p,
                })
                .collect();
            let reports = run_points_collect(&points, &model, &opts, |m, cfg, mode, o| baseline(m, cfg, Baseline::IdentityPhiEqualPower, mode, o));
            for (p, r) in points.iter().zip(&reports) {
                if let Ok(r) = r {
                    let (de, mc) = (r.de_metrics.se, r.mc_metrics.se);
                    eprintln!(
                        "pmax {} dBm: DE SE {de:.4}, MC SE {mc:.4} ({} draws), relative error {:.3}%",
                        p.grid_value,
                        opts.mc_draws,
                        100.0 * (de - mc).abs() / mc
                    );
                }
            }
            write_points(c, &points, reports)
        }
    }
}

fn load_config(c: &Common) -> Result<Loaded, CliError> {
    let (mut cfg, rho, ratio) = match &c.config {
        Some(path) => {
            let shown = path.display();
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{shown}: {e}")))?;
            let file = ConfigFile::parse(&text).map_err(|e| usage(format!("{shown}: {e}")))?;
            let cfg = file.system_config().map_err(|e| usage(format!("{shown}: {e}")))?;
            let rho = file.rho_range().map_err(|e| usage(format!("{shown}: {e}")))?;
            (cfg, rho, file.beta_over_ptot)
        }
        None => (SystemConfig::reference(20.0, PhaseConstraint::Continuous).map_err(core_err)?, RhoRange::default(), None),
    };
    let phase = match (c.phase, c.bits) {
        (None, None) => None,
        (Some(PhaseArg::Cps), None) => Some(PhaseConstraint::Continuous),
        (Some(PhaseArg::Cps), Some(_)) => return Err(usage("--bits only applies to --phase dps")),
        (_, Some(b)) => Some(PhaseConstraint::from_bits(b).map_err(core_err)?),
        (Some(PhaseArg::Dps), None) => match cfg.phase {
            PhaseConstraint::Discrete { .. } => None,
            PhaseConstraint::Continuous => return Err(usage("--phase dps needs --bits")),
        },
    };
    if let Some(p) = phase {
        cfg = cfg.with_phase(p).map_err(core_err)?;
    }
    Ok(Loaded { cfg, rho, ratio })
}

fn solve_options(c: &Common, default_draws: usize) -> Result<SolveOptions, CliError> {
    let draws = c.draws.unwrap_or(default_draws);
    if draws == 0 {
        return Err(usage("--draws must be >= 1"));
    }
    if c.max_outer == 0 {
        return Err(usage("--max-outer must be >= 1"));
    }
    if !(c.eps > 0.0 && c.eps.is_finite()) {
        return Err(usage(format!("--eps {} must be > 0", c.eps)));
    }
    Ok(SolveOptions {
        eps: c.eps,
        max_outer: c.max_outer,
        mc_draws: draws,
        mc_seed: c.seed.wrapping_add(1),
        ..SolveOptions::default()
    })
}

fn check_ratio(r: f64) -> Result<(), CliError> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--beta-over-ptot {r} must be >= 0")))
    }
}

fn mode_name(m: ModeArg) -> &'static str {
    match m {
        ModeArg::Re => "re",
        ModeArg::Ee => "ee",
        ModeArg::Se => "se",
    }
}

fn mode_spec(c: &Common, config_ratio: Option<f64>) -> Result<ModeSpec, CliError> {
    match (c.mode, c.beta_over_ptot.as_slice()) {
        (ModeArg::Re, []) => Ok(config_ratio.map_or(ModeSpec::ConfigBeta, ModeSpec::Ratio)),
        (ModeArg::Re, [r]) => {
            check_ratio(*r)?;
            Ok(ModeSpec::Ratio(*r))
        }
        (ModeArg::Re, _) => Err(usage("only tradeoff takes several --beta-over-ptot values")),
        (_, [_, ..]) => Err(usage("--beta-over-ptot applies to --mode re")),
        (ModeArg::Ee, []) => Ok(ModeSpec::Fixed(Mode::Ee)),
        (ModeArg::Se, []) => Ok(ModeSpec::Fixed(Mode::Se)),
    }
}

/// One config per `--pmax` value, paired with the value in dBm.
fn grid_points(c: &Common, cfg: &SystemConfig, default: &str) -> Result<Vec<(f64, SystemConfig)>, CliError> {
    let text = c.pmax.as_deref().unwrap_or(default);
    let grid = parse_grid(text).map_err(|e| usage(format!("--pmax: {e}")))?;
    Ok(grid.into_iter().map(|v| (v, cfg.with_max_power(dbm_to_watt(v)))).collect())
}

/// The config with `--pmax` applied when it names a single value.
fn single_point(c: &Common, cfg: &SystemConfig) -> Result<(f64, SystemConfig), CliError> {
    match c.pmax.as_deref() {
        None => Ok((watt_to_dbm(cfg.max_power[0]), cfg.clone())),
        Some(text) => {
            let grid = parse_grid(text).map_err(|e| usage(format!("--pmax: {e}")))?;
            match grid.as_slice() {
                [v] => Ok((*v, cfg.with_max_power(dbm_to_watt(*v)))),
                _ => Err(usage("this command takes a single --pmax value")),
            }
        }
    }
}

fn cmd_solve(c: &Common, cfg: &SystemConfig, model: &ChannelModel, opts: &SolveOptions, spec: ModeSpec) -> Result<(), CliError> {
    let (pmax, cfg) = single_point(c, cfg)?;
    let mode = spec.resolve(&cfg);
    let report = solve(model, &cfg, mode, opts).map_err(|e| fail(c, &[("solve", &e)]))?;
    let mut w = csv::Writer::from_writer(sink(c.out.as_deref())?);
    w.write_record(SUMMARY_HEADER)?;
    w.write_record(summary_row("solve", pmax, &report, c.timing))?;
    w.flush()?;
    Ok(())
}

fn cmd_convergence(c: &Common, cfg: &SystemConfig, model: &ChannelModel, opts: &SolveOptions, spec: ModeSpec) -> Result<(), CliError> {
    let (_, cfg) = single_point(c, cfg)?;
    let mode = spec.resolve(&cfg);
    let opts = SolveOptions { mc_each_iteration: true, ..*opts };
    let report = solve(model, &cfg, mode, &opts).map_err(|e| fail(c, &[("convergence", &e)]))?;
    let mut w = csv::Writer::from_writer(sink(c.out.as_deref())?);
    w.write_record(TRACE_HEADER)?;
    write_trace(&mut w, "convergence", Some(&report.initial), &report.trace)?;
    w.flush()?;
    Ok(())
}

/// Writes the partial traces of failed runs and returns the error for the
/// first failure.
fn fail(c: &Common, failures: &[(&str, &SolveError)]) -> CliError {
    let written = partial_sink(c.out.as_deref()).and_then(|(out, shown)| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for (experiment, e) in failures {
            write_trace(&mut w, experiment, None, &e.partial)?;
        }
        w.flush()?;
        Ok(shown)
    });
    match written {
        Ok(shown) => log::warn!("partial trace written to {shown}"),
        Err(e) => log::error!("could not write partial trace: {e}"),
    }
    solve_err(failures[0].1)
}

type Runner = fn(&ChannelModel, &SystemConfig, Mode, &SolveOptions) -> Result<SolveReport, SolveError>;

/// Points run concurrently; each uses Monte-Carlo seed `seed + 1 + index`.
fn run_points_collect<F>(points: &[Point], model: &ChannelModel, opts: &SolveOptions, f: F) -> Vec<Result<SolveReport, SolveError>>
where
    F: Fn(&ChannelModel, &SystemConfig, Mode, &SolveOptions) -> Result<SolveReport, SolveError> + Sync,
{
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let o = SolveOptions {
                mc_seed: opts.mc_seed.wrapping_add(i as u64),
                ..*opts
            };
            f(model, &p.cfg, p.mode, &o)
        })
        .collect()
}

fn run_points(c: &Common, points: Vec<Point>, model: &ChannelModel, opts: &SolveOptions, f: Runner) -> Result<(), CliError> {
    let reports = run_points_collect(&points, model, opts, f);
    write_points(c, &points, reports)
}

/// Summary rows for the points that succeeded, in grid order; failures get
/// their partial traces written and turn into the command's error.
fn write_points(c: &Common, points: &[Point], reports: Vec<Result<SolveReport, SolveError>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(sink(c.out.as_deref())?);
    w.write_record(SUMMARY_HEADER)?;
    let mut failures = Vec::new();
    for (p, r) in points.iter().zip(&reports) {
        match r {
            Ok(r) => w.write_record(summary_row(&p.experiment, p.grid_value, r, c.timing))?,
            Err(e) => {
                log::error!("{} at {}: {e}", p.experiment, p.grid_value);
                failures.push((p.experiment.as_str(), e));
            }
        }
    }
    w.flush()?;
    drop(w);
    let _ = io::stdout().flush();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(fail(c, &failures))
    }
}
