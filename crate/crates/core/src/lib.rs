//! Joint transmit-covariance and RIS phase-shift optimization for the
//! uplink of a RIS-aided multi-user MIMO system with partial CSI.
//!
//! The objective is resource efficiency (RE), a weighted blend of energy
//! efficiency and spectral efficiency:
//!
//! ```text
//! RE = SE / P_sum + beta * SE / P_tot      [bits/Joule/Hz]
//! ```
//!
//! The optimizer alternates between two blocks:
//!
//! * power allocation along the statistical eigen-directions of each user,
//!   driven by the deterministic-equivalent (DE) SE and a quadratic
//!   transform of the fractional objective ([`power_alloc`]);
//! * the RIS reflection vector, through a WMMSE reformulation whose
//!   phase subproblem is solved by a negative-square-penalty homotopy with
//!   gradient-extrapolated majorization-minimization ([`phase_opt`]).
//!
//! Every analytic quantity can be cross-checked against a seeded
//! Monte-Carlo estimate of the ergodic SE ([`metrics::ergodic_se_mc`]).

pub mod ao;
pub mod channel;
pub mod config;
pub mod det_equiv;
mod error;
pub mod linalg;
pub mod metrics;
pub mod phase_opt;
pub mod power_alloc;
pub mod units;

pub use ao::{baseline, solve, solve_from, sweep, Baseline, GridPoint, GridValue, Mode, SolveError, SolveOptions, SolveReport, TracePoint};
pub use channel::{ChannelDraw, ChannelModel, RhoRange};
pub use config::{PhaseConstraint, RisPowerTable, SystemConfig};
pub use error::{Error, Result};
pub use metrics::{MetricReport, PowerAllocation};
pub use phase_opt::PhaseVector;

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
