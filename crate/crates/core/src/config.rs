//! System constants and the human-editable configuration file.
//!
//! Powers are stored in watts. The configuration file accepts either a plain
//! key (watts) or the same key with a `_dbm` suffix, converted on load.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::channel::RhoRange;
use crate::units::dbm_to_watt;
use crate::{Error, Result, C64};

/// Feasible set of a single RIS reflection coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseConstraint {
    /// Any point on the unit circle.
    Continuous,
    /// `levels` uniformly spaced points `exp(j(2 pi m + pi) / levels)`.
    Discrete { levels: u32 },
}

impl PhaseConstraint {
    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::config("bits", format!("{bits} is outside 1..=16")));
        }
        Ok(PhaseConstraint::Discrete { levels: 1 << bits })
    }

    /// Phase resolution in bits, `None` for continuous phases.
    pub fn bits(&self) -> Option<u32> {
        match *self {
            PhaseConstraint::Continuous => None,
            PhaseConstraint::Discrete { levels } => Some(levels.trailing_zeros()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PhaseConstraint::Continuous => Ok(()),
            PhaseConstraint::Discrete { levels } if levels >= 2 && levels.is_power_of_two() => {
                Ok(())
            }
            PhaseConstraint::Discrete { levels } => Err(Error::config(
                "phase",
                format!("discrete level count {levels} must be a power of two >= 2"),
            )),
        }
    }

    /// The `m`-th discrete phase point. Every discrete coefficient produced by
    /// this crate is built through this function, so membership can be
    /// checked bit-for-bit.
    pub fn discrete_point(m: u32, levels: u32) -> C64 {
        let angle = (2.0 * PI * f64::from(m) + PI) / f64::from(levels);
        C64::from_polar(1.0, angle)
    }

    /// Distance between `z` and the constraint set, measured as modulus error
    /// (continuous) or angle error to the nearest level (discrete) plus the
    /// modulus error.
    pub fn residual(&self, z: C64) -> f64 {
        match *self {
            PhaseConstraint::Continuous => (z.norm() - 1.0).abs(),
            PhaseConstraint::Discrete { levels } => {
                let step = 2.0 * PI / f64::from(levels);
                let t = (z.arg() - PI / f64::from(levels)) / step;
                let angle_err = (t - t.round()).abs() * step;
                angle_err + (z.norm() - 1.0).abs()
            }
        }
    }
}

/// Per-element RIS static power as a function of phase resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RisPowerTable {
    /// Watts, keyed by resolution in bits.
    pub by_bits: BTreeMap<u32, f64>,
    /// Watts, for continuous (infinite-resolution) phase shifters.
    pub continuous: Option<f64>,
}

impl RisPowerTable {
    pub fn lookup(&self, phase: &PhaseConstraint) -> Option<f64> {
        match phase.bits() {
            None => self.continuous,
            Some(b) => self.by_bits.get(&b).copied(),
        }
    }

    /// Reference values: 5, 15 and 25 dBm for 1-bit, 2-bit and continuous.
    pub fn reference() -> Self {
        RisPowerTable {
            by_bits: BTreeMap::from([(1, dbm_to_watt(5.0)), (2, dbm_to_watt(15.0))]),
            continuous: Some(dbm_to_watt(25.0)),
        }
    }
}

/// All scalar system constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Antennas per user terminal, one entry per user (`K` = length).
    pub user_antennas: Vec<usize>,
    /// BS antenna count `M`.
    pub bs_antennas: usize,
    /// RIS element count `N_R`.
    pub ris_elements: usize,
    pub bandwidth_hz: f64,
    /// Noise power at the BS in watts.
    pub noise_power: f64,
    /// Amplifier inefficiency per user (reciprocal of the PA efficiency).
    pub amplifier_inefficiency: Vec<f64>,
    /// Static circuit power per user, watts.
    pub circuit_power: Vec<f64>,
    /// BS static power, watts.
    pub bs_power: f64,
    pub ris_power_table: RisPowerTable,
    /// Per-element RIS power resolved from the table for `phase`, watts.
    pub ris_element_power: f64,
    /// Transmit power budget per user, watts.
    pub max_power: Vec<f64>,
    /// RE weighting factor.
    pub beta: f64,
    pub phase: PhaseConstraint,
}

impl SystemConfig {
    /// The reference system: K = 4 users with 2 antennas, M = 8, N_R = 32,
    /// 10 MHz, -96 dBm noise, PA efficiency 0.3, 10 dBm per-user and 39 dBm
    /// BS static power.
    pub fn reference(max_power_dbm: f64, phase: PhaseConstraint) -> Result<Self> {
        let k = 4;
        let table = RisPowerTable::reference();
        let ris_element_power = table
            .lookup(&phase)
            .ok_or_else(|| Error::config("ris_element_power", "no reference value"))?;
        let cfg = SystemConfig {
            user_antennas: vec![2; k],
            bs_antennas: 8,
            ris_elements: 32,
            bandwidth_hz: 10e6,
            noise_power: dbm_to_watt(-96.0),
            amplifier_inefficiency: vec![1.0 / 0.3; k],
            circuit_power: vec![dbm_to_watt(10.0); k],
            bs_power: dbm_to_watt(39.0),
            ris_power_table: table,
            ris_element_power,
            max_power: vec![dbm_to_watt(max_power_dbm); k],
            beta: 0.0,
            phase,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_users(&self) -> usize {
        self.user_antennas.len()
    }

    /// Total antennas over all users.
    pub fn total_user_antennas(&self) -> usize {
        self.user_antennas.iter().sum()
    }

    /// Static power that does not depend on the transmit covariances.
    pub fn static_power(&self) -> f64 {
        self.circuit_power.iter().sum::<f64>()
            + self.bs_power
            + self.ris_elements as f64 * self.ris_element_power
    }

    /// Overall available power budget `P_tot`.
    pub fn total_budget(&self) -> f64 {
        self.max_power.iter().sum::<f64>() + self.static_power()
    }

    /// Switches the phase mode and re-resolves the RIS element power.
    pub fn with_phase(&self, phase: PhaseConstraint) -> Result<Self> {
        phase.validate()?;
        let ris_element_power = self.ris_power_table.lookup(&phase).ok_or_else(|| {
            Error::config(
                "ris_element_power",
                format!("no entry for phase mode {phase:?}"),
            )
        })?;
        Ok(SystemConfig {
            phase,
            ris_element_power,
            ..self.clone()
        })
    }

    /// Sets the same power budget for every user.
    pub fn with_max_power(&self, watts: f64) -> Self {
        SystemConfig {
            max_power: vec![watts; self.num_users()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_users();
        if k == 0 {
            return Err(Error::config("user_antennas", "at least one user required"));
        }
        if self.user_antennas.contains(&0) {
            return Err(Error::config("user_antennas", "antenna counts must be >= 1"));
        }
        if self.bs_antennas == 0 {
            return Err(Error::config("bs_antennas", "must be >= 1"));
        }
        if self.ris_elements == 0 {
            return Err(Error::config("ris_elements", "must be >= 1"));
        }
        for (name, len) in [
            ("amplifier_inefficiency", self.amplifier_inefficiency.len()),
            ("circuit_power", self.circuit_power.len()),
            ("max_power", self.max_power.len()),
        ] {
            if len != k {
                return Err(Error::config(name, format!("expected {k} entries, got {len}")));
            }
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} must be finite and > 0")))
            }
        };
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("noise_power", self.noise_power)?;
        positive("bs_power", self.bs_power)?;
        positive("ris_element_power", self.ris_element_power)?;
        for &v in &self.circuit_power {
            positive("circuit_power", v)?;
        }
        for &v in &self.max_power {
            positive("max_power", v)?;
        }
        for &xi in &self.amplifier_inefficiency {
            if !(xi.is_finite() && xi >= 1.0) {
                return Err(Error::config("amplifier_inefficiency", format!("{xi} must be >= 1")));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config("beta", format!("{} must be >= 0", self.beta)));
        }
        self.phase.validate()
    }
}

/// A value that is either shared by all users or listed per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser<T> {
    Same(T),
    Each(Vec<T>),
}

impl<T: Clone> PerUser<T> {
    fn expand(&self, k: usize, field: &str) -> Result<Vec<T>> {
        match self {
            PerUser::Same(v) => Ok(vec![v.clone(); k]),
            PerUser::Each(v) if v.len() == k => Ok(v.clone()),
            PerUser::Each(v) => Err(Error::config(
                field,
                format!("expected {k} per-user entries, got {}", v.len()),
            )),
        }
    }
}

/// On-disk configuration, kept in the form the user wrote it so that it can
/// be re-serialized without unit drift.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub num_users: Option<usize>,
    pub user_antennas: Option<PerUser<usize>>,
    pub bs_antennas: Option<usize>,
    pub ris_elements: Option<usize>,
    pub bandwidth_hz: Option<f64>,
    pub noise_power: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    pub amplifier_inefficiency: Option<PerUser<f64>>,
    pub circuit_power: Option<PerUser<f64>>,
    pub circuit_power_dbm: Option<PerUser<f64>>,
    pub bs_power: Option<f64>,
    pub bs_power_dbm: Option<f64>,
    pub max_power: Option<PerUser<f64>>,
    pub max_power_dbm: Option<PerUser<f64>>,
    pub beta: Option<f64>,
    pub beta_over_ptot: Option<f64>,
    /// `"cps"` or `"dps"`.
    pub phase: Option<String>,
    pub bits: Option<u32>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    /// Keys are bit resolutions (`"1"`, `"2"`, ...) or `"continuous"`.
    pub ris_element_power: Option<BTreeMap<String, f64>>,
    pub ris_element_power_dbm: Option<BTreeMap<String, f64>>,
}

fn pick<T: Clone>(
    plain: &Option<T>,
    dbm: &Option<T>,
    field: &str,
    convert: impl Fn(&T) -> T,
) -> Result<T> {
    match (plain, dbm) {
        (Some(_), Some(_)) => Err(Error::config(
            field,
            format!("both `{field}` and `{field}_dbm` given"),
        )),
        (Some(v), None) => Ok(v.clone()),
        (None, Some(v)) => Ok(convert(v)),
        (None, None) => Err(Error::config(field, "missing")),
    }
}

fn dbm_per_user(v: &PerUser<f64>) -> PerUser<f64> {
    match v {
        PerUser::Same(x) => PerUser::Same(dbm_to_watt(*x)),
        PerUser::Each(xs) => PerUser::Each(xs.iter().map(|&x| dbm_to_watt(x)).collect()),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config structure is always serializable")
    }

    pub fn rho_range(&self) -> Result<RhoRange> {
        let d = RhoRange::default();
        RhoRange::new(self.rho_min.unwrap_or(d.min), self.rho_max.unwrap_or(d.max))
    }

    fn ris_table(&self) -> Result<RisPowerTable> {
        let raw = match (&self.ris_element_power, &self.ris_element_power_dbm) {
            (None, None) => return Ok(RisPowerTable::reference()),
            (plain, dbm) => pick(plain, dbm, "ris_element_power", |m| {
                m.iter().map(|(k, v)| (k.clone(), dbm_to_watt(*v))).collect()
            })?,
        };
        let mut table = RisPowerTable {
            by_bits: BTreeMap::new(),
            continuous: None,
        };
        for (key, watts) in raw {
            match key.as_str() {
                "continuous" | "inf" | "cps" => table.continuous = Some(watts),
                other => {
                    let bits: u32 = other.parse().map_err(|_| {
                        Error::config(
                            "ris_element_power",
                            format!("key `{other}` is neither a bit count nor `continuous`"),
                        )
                    })?;
                    table.by_bits.insert(bits, watts);
                }
            }
        }
        Ok(table)
    }

    fn phase_constraint(&self) -> Result<PhaseConstraint> {
        match (self.phase.as_deref().unwrap_or("cps"), self.bits) {
            ("cps", _) => Ok(PhaseConstraint::Continuous),
            ("dps", Some(b)) => PhaseConstraint::from_bits(b),
            ("dps", None) => Err(Error::config("bits", "required when phase = \"dps\"")),
            (other, _) => Err(Error::config(
                "phase",
                format!("`{other}` is not one of \"cps\", \"dps\""),
            )),
        }
    }

    pub fn system_config(&self) -> Result<SystemConfig> {
        let user_antennas = self
            .user_antennas
            .as_ref()
            .ok_or_else(|| Error::config("user_antennas", "missing"))?;
        let k = match (self.num_users, user_antennas) {
            (Some(k), _) => k,
            (None, PerUser::Each(v)) => v.len(),
            (None, PerUser::Same(_)) => {
                return Err(Error::config("num_users", "missing"));
            }
        };
        let user_antennas = user_antennas.expand(k, "user_antennas")?;
        let amplifier_inefficiency = self
            .amplifier_inefficiency
            .as_ref()
            .ok_or_else(|| Error::config("amplifier_inefficiency", "missing"))?
            .expand(k, "amplifier_inefficiency")?;
        let circuit_power = pick(
            &self.circuit_power,
            &self.circuit_power_dbm,
            "circuit_power",
            dbm_per_user,
        )?
        .expand(k, "circuit_power")?;
        let max_power = pick(&self.max_power, &self.max_power_dbm, "max_power", dbm_per_user)?
            .expand(k, "max_power")?;
        let phase = self.phase_constraint()?;
        let ris_power_table = self.ris_table()?;
        let ris_element_power = ris_power_table.lookup(&phase).ok_or_else(|| {
            Error::config(
                "ris_element_power",
                format!("no entry for phase mode {phase:?}"),
            )
        })?;

        let mut cfg = SystemConfig {
            user_antennas,
            bs_antennas: self
                .bs_antennas
                .ok_or_else(|| Error::config("bs_antennas", "missing"))?,
            ris_elements: self
                .ris_elements
                .ok_or_else(|| Error::config("ris_elements", "missing"))?,
            bandwidth_hz: self
                .bandwidth_hz
                .ok_or_else(|| Error::config("bandwidth_hz", "missing"))?,
            noise_power: pick(&self.noise_power, &self.noise_power_dbm, "noise_power", |v| {
                dbm_to_watt(*v)
            })?,
            amplifier_inefficiency,
            circuit_power,
            bs_power: pick(&self.bs_power, &self.bs_power_dbm, "bs_power", |v| {
                dbm_to_watt(*v)
            })?,
            ris_power_table,
            ris_element_power,
            max_power,
            beta: 0.0,
            phase,
        };
        cfg.beta = match (self.beta, self.beta_over_ptot) {
            (Some(_), Some(_)) => {
                return Err(Error::config("beta", "both `beta` and `beta_over_ptot` given"))
            }
            (Some(b), None) => b,
            (None, Some(r)) => r * cfg.total_budget(),
            (None, None) => 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
