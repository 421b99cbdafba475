use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use clap::{Args, ValueEnum};
use evcharge::data_ingest::{parse_timestamp, DayFilter};
use evcharge::mdp_solver::{ActionMode, MdpConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Charge,
    V2g,
}

impl From<Mode> for ActionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Charge => ActionMode::ChargeOnly,
            Mode::V2g => ActionMode::V2g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Days {
    All,
    Weekday,
    Weekend,
}

impl From<Days> for DayFilter {
    fn from(d: Days) -> Self {
        match d {
            Days::All => DayFilter::All,
            Days::Weekday => DayFilter::Weekday,
            Days::Weekend => DayFilter::Weekend,
        }
    }
}

/// Settings shared by every subcommand. Each one may come from the config
/// file; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Trip log CSV (`timestamp,state`).
    #[arg(long, global = true)]
    pub trips: Option<PathBuf>,
    /// Hourly price CSV (`timestamp,price_eur_mwh`).
    #[arg(long, global = true)]
    pub prices: Option<PathBuf>,
    /// Model JSON; written by `fit`, read by the other commands.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Trips before this date train the model, the rest is replayed.
    #[arg(long, global = true)]
    pub split_date: Option<NaiveDate>,
    /// Start of the solve or replay window (default: first price hour).
    #[arg(long, global = true)]
    pub start: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub day_filter: Option<Days>,
    #[arg(long, global = true)]
    pub init_knots: Option<usize>,
    #[arg(long, global = true)]
    pub max_knots: Option<usize>,
    #[arg(long, global = true)]
    pub max_states: Option<usize>,
    #[arg(long, global = true)]
    pub lr_alpha: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Stranding penalties, €/h; comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub phi: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub horizon_minutes: Option<usize>,
    #[arg(long, global = true)]
    pub grid_levels: Option<usize>,
    #[arg(long, global = true)]
    pub roll_every_minutes: Option<usize>,
    /// Solve once over the horizon instead of rolling.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub fixed_horizon: Option<bool>,
    /// optimal, naive, night, low_price, v2g_bounded, v2g_unbounded.
    #[arg(long, global = true, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Replay on this many simulated driving traces instead of the trip log.
    #[arg(long, global = true)]
    pub scenarios: Option<usize>,
    /// Length of generated traces and scenarios, days.
    #[arg(long, global = true)]
    pub days: Option<usize>,
    /// Initial state of charge as a share of capacity.
    #[arg(long, global = true)]
    pub initial_soc: Option<f64>,
    #[arg(skip)]
    pub mdp: Option<MdpConfig>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: Settings) -> Self {
        overlay!(
            self, top, trips, prices, model, out_dir, seed, threads, split_date, start, day_filter, init_knots,
            max_knots, max_states, lr_alpha, mode, phi, horizon_minutes, grid_levels, roll_every_minutes,
            fixed_horizon, policies, scenarios, days, initial_soc, mdp
        );
        self
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub trips: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub split_date: Option<NaiveDate>,
    pub start: Option<NaiveDateTime>,
    pub day_filter: DayFilter,
    pub init_knots: usize,
    pub max_knots: usize,
    pub max_states: usize,
    pub lr_alpha: f64,
    pub mode: Mode,
    pub phi: Vec<f64>,
    /// Whether the penalty list came from the user rather than the default.
    pub phi_explicit: bool,
    pub grid_levels: usize,
    pub roll_every_minutes: usize,
    pub fixed_horizon: bool,
    pub policies: Vec<String>,
    pub scenarios: usize,
    pub days: usize,
    pub initial_soc: f64,
    pub mdp: MdpConfig,
}

pub const POLICY_NAMES: [&str; 6] = ["optimal", "naive", "night", "low_price", "v2g_bounded", "v2g_unbounded"];

impl RunConfig {
    pub fn resolve(s: Settings) -> Result<Self, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let mut mdp = s.mdp.unwrap_or_default();
        if let Some(h) = s.horizon_minutes {
            mdp.horizon_minutes = h;
        }
        let phi_explicit = s.phi.is_some();
        let phi = s.phi.unwrap_or_else(|| vec![mdp.phi]);
        if phi.is_empty() || phi.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("phi list must be non-empty and non-negative".into());
        }
        mdp.phi = phi[0];
        mdp.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let start = match s.start {
            Some(raw) => match parse_timestamp(&raw) {
                Some(ts) => Some(ts),
                None => return bad(format!("cannot read start timestamp `{raw}`")),
            },
            None => None,
        };
        let cfg = Self {
            trips: s.trips,
            prices: s.prices,
            model: s.model,
            out_dir: s.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            seed: s.seed.unwrap_or(0),
            threads: s.threads,
            split_date: s.split_date,
            start,
            day_filter: s.day_filter.map(DayFilter::from).unwrap_or(DayFilter::All),
            init_knots: s.init_knots.unwrap_or(8),
            max_knots: s.max_knots.unwrap_or(22),
            max_states: s.max_states.unwrap_or(4),
            lr_alpha: s.lr_alpha.unwrap_or(0.05),
            mode: s.mode.unwrap_or(Mode::Charge),
            phi,
            phi_explicit,
            grid_levels: s.grid_levels.unwrap_or(360),
            roll_every_minutes: s.roll_every_minutes.unwrap_or(1440),
            fixed_horizon: s.fixed_horizon.unwrap_or(false),
            policies: s
                .policies
                .unwrap_or_else(|| vec!["optimal".into(), "naive".into(), "night".into(), "low_price".into()]),
            scenarios: s.scenarios.unwrap_or(0),
            days: s.days.unwrap_or(183),
            initial_soc: s.initial_soc.unwrap_or(1.0),
            mdp,
        };
        if cfg.grid_levels < 2 {
            return bad("grid needs at least 2 levels".into());
        }
        if cfg.roll_every_minutes == 0 {
            return bad("re-solve interval must be positive".into());
        }
        if !(0.0..=1.0).contains(&cfg.initial_soc) {
            return bad("initial SOC must lie in [0, 1]".into());
        }
        if cfg.max_states < 2 {
            return bad("max_states must be at least 2".into());
        }
        if cfg.days == 0 {
            return bad("days must be positive".into());
        }
        if let Some(p) = cfg.policies.iter().find(|p| !POLICY_NAMES.contains(&p.as_str())) {
            return bad(format!("unknown policy `{p}`; expected one of {}", POLICY_NAMES.join(", ")));
        }
        if cfg.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(cfg)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
        path.as_deref().ok_or_else(|| CliError::Config(format!("no {what} given")))
    }

    /// Charge-only vehicle: discharging disabled.
    pub fn charge_cfg(&self, phi: f64) -> MdpConfig {
        MdpConfig {
            phi,
            u_min: 0.0,
            ..self.mdp.clone()
        }
    }

    /// V2G vehicle; discharges at `-u_max` unless a discharge limit is configured.
    pub fn v2g_cfg(&self, phi: f64) -> MdpConfig {
        let cfg = MdpConfig {
            phi,
            ..self.mdp.clone()
        };
        if cfg.u_min < 0.0 {
            cfg
        } else {
            cfg.v2g()
        }
    }

    pub fn mode_cfg(&self, mode: Mode, phi: f64) -> MdpConfig {
        match mode {
            Mode::Charge => self.charge_cfg(phi),
            Mode::V2g => self.v2g_cfg(phi),
        }
    }

    pub fn initial_energy(&self) -> f64 {
        (self.initial_soc * self.mdp.kappa).clamp(self.mdp.e_min, self.mdp.e_max)
    }

    /// Independent seed for component `stream` of the root seed.
    pub fn sub_seed(&self, stream: u64) -> u64 {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.next_u64()
    }
}
