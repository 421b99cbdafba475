//! Synthetic trip logs and prices with known generating parameters.
//!
//! Ground truth driving model (`N = 3`):
//!
//! * exit probability zero between 00:00 and 05:00, then a base level with a
//!   morning peak near 07:00 and a broader afternoon peak near 16:30,
//!   scaled to about 4.1 departures per day;
//! * every trip enters driving state 2, which moves on to state 3 with
//!   probability 0.15 per minute; state 3 ends the trip with probability 0.15.
//!   Trips last about 13 minutes on average, the most likely length is 7,
//!   giving roughly 55 minutes of driving per day.
//!
//! Prices follow a daily two-harmonic shape around 40 €/MWh with an AR(1)
//! hourly disturbance and a random daily level.

use chrono::{NaiveDate, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_ingest::{DrivingTrace, PriceSeries, MINUTES_PER_DAY, PARKED};
use crate::driving_model::{parked_start, simulate, DrivingModel, DrivingModelParams, ExitCurve, ModelStructure};

pub const TRIPS_PER_DAY: f64 = 4.1;
/// Per-minute probability of leaving each of the two driving phases.
pub const PHASE_EXIT: f64 = 0.15;

fn bump(minute: f64, centre: f64, width: f64) -> f64 {
    (-0.5 * ((minute - centre) / width).powi(2)).exp()
}

/// Exit-probability shape before scaling, indexed by minute-of-day index.
fn exit_shape(i: usize) -> f64 {
    let m = i as f64 + 0.5;
    if m < 300.0 {
        return 0.0;
    }
    // ramp in over the first hour so the curve stays continuous
    let ramp = ((m - 300.0) / 60.0).min(1.0);
    let evening_fade = if m > 1320.0 { ((1440.0 - m) / 120.0).max(0.0) } else { 1.0 };
    ramp * evening_fade * (0.25 + 1.6 * bump(m, 420.0, 40.0) + 1.0 * bump(m, 990.0, 80.0))
}

pub fn ground_truth_exit_curve() -> ExitCurve {
    let shape: Vec<f64> = (0..MINUTES_PER_DAY).map(exit_shape).collect();
    let total: f64 = shape.iter().sum();
    // departures happen only while parked; correct for the time spent driving
    let parked_share = 1.0 - TRIPS_PER_DAY * 2.0 / PHASE_EXIT / MINUTES_PER_DAY as f64;
    let scale = TRIPS_PER_DAY / total / parked_share;
    ExitCurve::Table {
        values: shape.iter().map(|v| v * scale).collect(),
    }
}

pub fn ground_truth_model() -> DrivingModel {
    let q = PHASE_EXIT;
    DrivingModel::new(
        ModelStructure::new(3).expect("three states"),
        DrivingModelParams {
            exit_prob: ground_truth_exit_curve(),
            entry_dist: vec![1.0, 0.0],
            hidden_trans: vec![vec![0.0, 1.0 - q, q], vec![q, 0.0, 1.0 - q]],
            initial_dist: parked_start(3),
        },
    )
    .expect("valid ground truth")
}

/// Simulates `days` whole days of driving from `model`, starting parked at
/// midnight of `first_day`.
pub fn generate_trace(model: &DrivingModel, first_day: NaiveDate, days: usize, seed: u64) -> DrivingTrace {
    let start = first_day.and_hms_opt(0, 0, 0).expect("midnight");
    simulate(model, PARKED, start, days * MINUTES_PER_DAY, seed).observed
}

/// Mean hourly price shape in €/MWh for hour `h` of the day.
pub fn price_shape(h: f64) -> f64 {
    use std::f64::consts::PI;
    40.0 - 12.0 * (2.0 * PI * (h - 2.0) / 24.0).cos() + 6.0 * (4.0 * PI * (h - 8.0) / 24.0).cos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceNoise {
    /// AR(1) coefficient of the hourly disturbance.
    pub ar: f64,
    /// Innovation standard deviation, €/MWh.
    pub sigma: f64,
    /// Standard deviation of the daily level shift, €/MWh.
    pub daily_sigma: f64,
}

impl Default for PriceNoise {
    fn default() -> Self {
        Self {
            ar: 0.8,
            sigma: 2.5,
            daily_sigma: 4.0,
        }
    }
}

/// Hourly sinusoid-plus-noise prices starting at `start` (on the hour).
pub fn synthetic_prices(start: NaiveDateTime, hours: usize, noise: PriceNoise, seed: u64) -> PriceSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innov = Normal::new(0.0, noise.sigma.max(0.0)).expect("finite sigma");
    let daily = Normal::new(0.0, noise.daily_sigma.max(0.0)).expect("finite sigma");
    let first_hour = chrono::Timelike::hour(&start) as usize;
    let mut level = daily.sample(&mut rng);
    let mut ar = 0.0;
    let hourly = (0..hours)
        .map(|i| {
            let h = (first_hour + i) % 24;
            if h == 0 && i > 0 {
                level = daily.sample(&mut rng);
            }
            ar = noise.ar * ar + innov.sample(&mut rng);
            price_shape(h as f64) + level + ar
        })
        .collect();
    PriceSeries::new(start, hourly).expect("start on the hour")
}
