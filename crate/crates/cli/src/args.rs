use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Resource-efficiency optimization for RIS-aided multi-user MIMO uplinks.
#[derive(Debug, Parser)]
#[command(name = "risopt", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Optimize one operating point and write its summary row.
    Solve,
    /// Optimize every point of a `--pmax` grid on one channel realization.
    Sweep,
    /// Per-iteration trace of one solve, with Monte-Carlo SE at every iterate.
    Convergence,
    /// (SE, EE) endpoints for each `--beta-over-ptot` value over a `--pmax` grid.
    Tradeoff,
    /// Deterministic-equivalent SE against Monte-Carlo at equal power and
    /// the initial phases.
    ValidateDe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Re,
    Ee,
    Se,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Cps,
    Dps,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML system configuration; the built-in reference system at 20 dBm
    /// when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Channel realization seed. Monte-Carlo draws use `seed + 1`.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Re)]
    pub mode: ModeArg,

    /// RE weight as a fraction of the total budget. Takes a comma-separated
    /// list for `tradeoff`.
    #[arg(long, global = true, value_delimiter = ',', value_name = "FLOAT")]
    pub beta_over_ptot: Vec<f64>,

    #[arg(long, global = true, value_enum)]
    pub phase: Option<PhaseArg>,

    /// Phase resolution for discrete phases; implies `--phase dps`.
    #[arg(long, global = true)]
    pub bits: Option<u32>,

    /// Per-user budget in dBm, `START:STEP:END` or a single value.
    #[arg(long, global = true, value_name = "START:STEP:END")]
    pub pmax: Option<String>,

    /// Monte-Carlo draws for validating returned iterates.
    #[arg(long, global = true)]
    pub draws: Option<usize>,

    /// Worker threads for grid points and Monte-Carlo draws.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Output CSV; stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Fill the `wall_ms` column. Off by default so that repeated runs
    /// produce identical files.
    #[arg(long, global = true)]
    pub timing: bool,

    /// Outer-iteration cap of the alternating optimization.
    #[arg(long, global = true, default_value_t = 50)]
    pub max_outer: usize,

    /// Relative objective change that ends the outer loop.
    #[arg(long, global = true, default_value_t = 1e-4)]
    pub eps: f64,
}
