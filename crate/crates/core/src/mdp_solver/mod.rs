//! Finite-horizon charging decision process over (stored energy, desired
//! driving state), solved by backward induction.
//!
//! Units: energy kWh, power kW, prices €/MWh at the interface (converted to
//! €/kWh internally), one step per minute with `omega = 1/60` h.

mod dump;
mod solve;

pub use dump::{write_heatmap_csv, write_policy_csv, HEATMAP_HEADER, POLICY_HEADER};
pub use solve::{
    expected_stranded_minutes, rolling_solve, solve, PolicyTable, Solution, ValueTable,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_ingest::PARKED;

/// Energies within this distance of `e_min` count as empty.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("price window has {got} minutes, horizon needs {needed}")]
    PriceCoverage { needed: usize, got: usize },
    #[error("configuration describes {config} driving states, model has {model}")]
    StateMismatch { config: usize, model: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpConfig {
    pub u_max: f64,
    pub u_min: f64,
    pub e_max: f64,
    pub e_min: f64,
    /// Penalty per hour of desired but impossible driving, €/h.
    pub phi: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Average speed per driving state, km/h. A single value applies to all.
    pub speed: Vec<f64>,
    /// Consumption per driving state, kWh/km. A single value applies to all.
    pub mu: Vec<f64>,
    pub kappa: f64,
    pub omega: f64,
    pub beta: f64,
    pub horizon_minutes: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            u_max: 4.0,
            u_min: 0.0,
            e_max: 24.0,
            e_min: 0.0,
            phi: 10.0,
            eta_c: 0.9,
            eta_d: 0.9,
            speed: vec![40.0],
            mu: vec![0.2],
            kappa: 24.0,
            omega: 1.0 / 60.0,
            beta: 1.0,
            horizon_minutes: 2880,
        }
    }
}

fn per_state(values: &[f64], i: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[i]
    }
}

impl MdpConfig {
    /// Same vehicle with discharging at `-u_max`.
    pub fn v2g(mut self) -> Self {
        self.u_min = -self.u_max;
        self
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        let bad = |m: &str| Err(MdpError::InvalidConfig(m.to_string()));
        let finite = [
            self.u_max, self.u_min, self.e_max, self.e_min, self.phi, self.eta_c, self.eta_d, self.kappa, self.omega,
            self.beta,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(self.e_min <= self.e_max && self.e_max <= self.kappa) {
            return bad("need e_min <= e_max <= kappa");
        }
        if self.e_min < 0.0 {
            return bad("e_min must be non-negative");
        }
        if !(self.u_min <= 0.0 && 0.0 <= self.u_max) {
            return bad("need u_min <= 0 <= u_max");
        }
        if !(self.eta_c > 0.0 && self.eta_c <= 1.0 && self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return bad("efficiencies must lie in (0,1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0,1]");
        }
        if self.omega <= 0.0 {
            return bad("omega must be positive");
        }
        if self.phi < 0.0 {
            return bad("phi must be non-negative");
        }
        if self.horizon_minutes == 0 {
            return bad("horizon must be at least one minute");
        }
        if self.speed.is_empty() || self.mu.is_empty() {
            return bad("speed and mu need at least one value");
        }
        if self.speed.iter().chain(&self.mu).any(|v| !v.is_finite() || *v < 0.0) {
            return bad("speed and mu must be non-negative");
        }
        Ok(())
    }

    /// Checks the per-state vectors against a model with `n_states` states.
    pub fn check_states(&self, n_states: usize) -> Result<(), MdpError> {
        let driving = n_states - 1;
        for len in [self.speed.len(), self.mu.len()] {
            if len != 1 && len != driving {
                return Err(MdpError::StateMismatch {
                    config: len,
                    model: driving,
                });
            }
        }
        Ok(())
    }

    /// Energy used per minute in actual state `x_a`, kWh.
    pub fn drive_energy(&self, x_a: u8) -> f64 {
        if x_a == PARKED {
            0.0
        } else {
            let i = x_a as usize - 2;
            per_state(&self.speed, i) * per_state(&self.mu, i) * self.omega
        }
    }
}

/// Uniform energy levels from `e_min` to `e_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGrid {
    e_min: f64,
    e_max: f64,
    m: usize,
}

impl EnergyGrid {
    pub fn new(cfg: &MdpConfig, m: usize) -> Result<Self, MdpError> {
        if m < 2 {
            return Err(MdpError::InvalidConfig("energy grid needs at least 2 levels".into()));
        }
        if cfg.e_max <= cfg.e_min {
            return Err(MdpError::InvalidConfig("energy grid needs e_max > e_min".into()));
        }
        Ok(Self {
            e_min: cfg.e_min,
            e_max: cfg.e_max,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.e_max - self.e_min) / (self.m - 1) as f64
    }

    pub fn level(&self, j: usize) -> f64 {
        if j == self.m - 1 {
            self.e_max
        } else {
            self.e_min + j as f64 * self.spacing()
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.level(j)).collect()
    }

    /// Lower bracketing level and the weight of the upper one, so that
    /// `e = (1 - w) level(lo) + w level(lo + 1)`.
    pub fn bracket(&self, e: f64) -> (usize, f64) {
        let pos = ((e - self.e_min) / self.spacing()).clamp(0.0, (self.m - 1) as f64);
        let lo = (pos.floor() as usize).min(self.m - 2);
        (lo, (pos - lo as f64).clamp(0.0, 1.0))
    }

    /// Nearest level, with anything at `e_min` mapped to level 0.
    pub fn nearest(&self, e: f64) -> usize {
        if e <= self.e_min + ENERGY_TOLERANCE {
            return 0;
        }
        let pos = ((e - self.e_min) / self.spacing()).round() as usize;
        pos.clamp(1, self.m - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    ChargeOnly,
    V2g,
}

/// Discrete desired charge rates, ordered by tie-break preference:
/// smaller `|u|` first, then charging before discharging.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    values: Vec<f64>,
}

impl ActionSet {
    pub fn new(mut values: Vec<f64>, cfg: &MdpConfig) -> Result<Self, MdpError> {
        if !values.contains(&0.0) {
            return Err(MdpError::InvalidConfig("action set must contain 0".into()));
        }
        if values.iter().any(|&u| u < cfg.u_min || u > cfg.u_max || !u.is_finite()) {
            return Err(MdpError::InvalidConfig("actions must lie within [u_min, u_max]".into()));
        }
        if values.len() > u8::MAX as usize {
            return Err(MdpError::InvalidConfig("too many actions".into()));
        }
        values.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then((*a < 0.0).cmp(&(*b < 0.0))));
        values.dedup();
        Ok(Self { values })
    }

    /// `{0, u_max}` or `{0, u_max, u_min}`.
    pub fn from_mode(mode: ActionMode, cfg: &MdpConfig) -> Result<Self, MdpError> {
        match mode {
            ActionMode::ChargeOnly => Self::new(vec![0.0, cfg.u_max], cfg),
            ActionMode::V2g => {
                if cfg.u_min >= 0.0 {
                    return Err(MdpError::InvalidConfig("V2G mode needs u_min < 0".into()));
                }
                Self::new(vec![0.0, cfg.u_max, cfg.u_min], cfg)
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: u8) -> f64 {
        self.values[index as usize]
    }

    pub fn idle(&self) -> u8 {
        self.values.iter().position(|&u| u == 0.0).expect("0 is always present") as u8
    }
}

/// Sign of an action: 1 charge, 0 idle, -1 discharge.
pub fn action_code(u: f64) -> i8 {
    if u > 0.0 {
        1
    } else if u < 0.0 {
        -1
    } else {
        0
    }
}

fn is_empty_battery(e: f64, cfg: &MdpConfig) -> bool {
    e <= cfg.e_min + ENERGY_TOLERANCE
}

/// The vehicle stays put when the battery is empty.
pub fn actual_state(e: f64, x: u8, cfg: &MdpConfig) -> u8 {
    if x != PARKED && is_empty_battery(e, cfg) {
        PARKED
    } else {
        x
    }
}

/// No charging while actually driving.
pub fn actual_charge(e: f64, x: u8, u: f64, cfg: &MdpConfig) -> f64 {
    if x != PARKED && !is_empty_battery(e, cfg) {
        0.0
    } else {
        u
    }
}

/// Shortens a charge or discharge so that storage lands exactly on the
/// bound it would otherwise cross.
pub fn feasible_charge(e: f64, u: f64, cfg: &MdpConfig) -> f64 {
    if u > 0.0 {
        let room = (cfg.e_max - e).max(0.0);
        u.min(room / (cfg.eta_c * cfg.omega))
    } else if u < 0.0 {
        let stock = (e - cfg.e_min).max(0.0);
        u.max(-stock * cfg.eta_d / cfg.omega)
    } else {
        0.0
    }
}

/// Storage after one minute, before projection onto `[e_min, e_max]`.
pub fn step_energy(e: f64, x_a: u8, u_a: f64, cfg: &MdpConfig) -> f64 {
    let eff = if u_a >= 0.0 { cfg.eta_c } else { 1.0 / cfg.eta_d };
    e + eff * cfg.omega * u_a - cfg.drive_energy(x_a)
}

pub fn project_energy(e: f64, cfg: &MdpConfig) -> f64 {
    e.clamp(cfg.e_min, cfg.e_max)
}

/// Full minute transition: actual state, truncated actual charge and the
/// projected next storage level.
pub fn transition(e: f64, x: u8, u: f64, cfg: &MdpConfig) -> (u8, f64, f64) {
    let x_a = actual_state(e, x, cfg);
    let u_a = feasible_charge(e, actual_charge(e, x, u, cfg), cfg);
    (x_a, u_a, project_energy(step_energy(e, x_a, u_a, cfg), cfg))
}

/// Minute revenue with `price` in €/MWh: minus the energy bill minus the
/// penalty for desired but impossible driving.
pub fn stage_revenue(e: f64, x: u8, u_a: f64, price: f64, cfg: &MdpConfig) -> f64 {
    let stranded = x != PARKED && is_empty_battery(e, cfg);
    -price / 1000.0 * cfg.omega * u_a - if stranded { cfg.omega * cfg.phi } else { 0.0 }
}

/// Leftover energy sold at the mean horizon price (€/MWh).
pub fn terminal_revenue(e_t: f64, prices: &[f64], cfg: &MdpConfig) -> f64 {
    let mean = prices.iter().sum::<f64>() / prices.len() as f64;
    cfg.eta_d * e_t * mean / 1000.0
}
