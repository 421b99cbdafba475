use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DrivingModel;
use crate::data_ingest::{DrivingTrace, MinuteOfDay, PARKED};
use crate::stats::{quantile, std_dev};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDriving {
    /// Hidden states `1..=N`.
    pub hidden: Vec<u8>,
    pub observed: DrivingTrace,
}

fn sample(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding leaves u beyond the last cumulative sum
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Samples `horizon` minutes starting in `start_state` at `start`.
pub fn simulate(
    model: &DrivingModel,
    start_state: u8,
    start: NaiveDateTime,
    horizon: usize,
    seed: u64,
) -> SimulatedDriving {
    assert!(horizon >= 1, "horizon must be at least one minute");
    let table = model.transition_table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = Vec::with_capacity(horizon);
    let mut x = start_state;
    let mut s = MinuteOfDay::of(start);
    hidden.push(x);
    for _ in 1..horizon {
        let row = table[s.index()].row(x);
        x = sample(row, rng.random::<f64>()) as u8 + 1;
        hidden.push(x);
        s = s.advance(1);
    }
    let observed: Vec<u8> = hidden.iter().map(|&k| model.structure.observable(k)).collect();
    SimulatedDriving {
        hidden,
        observed: DrivingTrace::new(start, observed).expect("non-empty simulated trace"),
    }
}

/// Simulated trip durations with a Gaussian kernel-density summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TripLengthDistribution {
    pub durations: Vec<u32>,
    pub bandwidth: f64,
}

impl TripLengthDistribution {
    pub fn mean(&self) -> f64 {
        self.durations.iter().map(|&d| d as f64).sum::<f64>() / self.durations.len() as f64
    }

    /// Replaces Silverman's rule with a fixed bandwidth.
    pub fn with_bandwidth(mut self, h: f64) -> Self {
        self.bandwidth = h;
        self
    }

    fn counts(&self) -> Vec<u64> {
        let max = self.durations.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max + 1];
        for &d in &self.durations {
            counts[d as usize] += 1;
        }
        counts
    }

    /// Kernel density at `x` minutes.
    pub fn density(&self, x: f64) -> f64 {
        self.density_grid(&[x])[0]
    }

    pub fn density_grid(&self, xs: &[f64]) -> Vec<f64> {
        let counts = self.counts();
        let n = self.durations.len() as f64;
        let h = self.bandwidth;
        let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
        xs.iter()
            .map(|&x| {
                counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(l, &c)| c as f64 * (-0.5 * ((x - l as f64) / h).powi(2)).exp())
                    .sum::<f64>()
                    * norm
            })
            .collect()
    }

    /// Duration in whole minutes where the density peaks.
    pub fn mode(&self) -> u32 {
        let max = self.durations.iter().copied().max().unwrap_or(1);
        let xs: Vec<f64> = (1..=max).map(f64::from).collect();
        let dens = self.density_grid(&xs);
        let best = dens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        best as u32 + 1
    }
}

fn silverman(values: &[f64]) -> f64 {
    let sd = std_dev(values);
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (values.len() as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Simulates `n_trips` trips: entry into a driving state, then the driving
/// rows until the chain returns to the parked state.
pub fn trip_length_distribution(model: &DrivingModel, n_trips: usize, seed: u64) -> TripLengthDistribution {
    assert!(n_trips >= 1, "need at least one trip");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = &model.params.hidden_trans;
    let durations: Vec<u32> = (0..n_trips)
        .map(|_| {
            let mut k = sample(&model.params.entry_dist, rng.random::<f64>()) + 2;
            let mut len = 1u32;
            loop {
                let next = sample(&rows[k - 2], rng.random::<f64>()) as u8 + 1;
                if next == PARKED {
                    break len;
                }
                k = next as usize;
                len += 1;
            }
        })
        .collect();
    let values: Vec<f64> = durations.iter().map(|&d| d as f64).collect();
    TripLengthDistribution {
        bandwidth: silverman(&values),
        durations,
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use crate::data_ingest::{parse_timestamp, DRIVING};

    fn model(exit: f64, back: f64) -> DrivingModel {
        DrivingModel::new(
            ModelStructure::new(2).unwrap(),
            DrivingModelParams {
                exit_prob: ExitCurve::constant(exit),
                entry_dist: vec![1.0],
                hidden_trans: vec![vec![back, 1.0 - back]],
                initial_dist: parked_start(2),
            },
        )
        .unwrap()
    }

    fn start() -> NaiveDateTime {
        parse_timestamp("2003-01-06T04:00").unwrap()
    }

    #[test]
    fn absorbing_parked() {
        let sim = simulate(&model(0.0, 0.3), PARKED, start(), 5000, 1);
        assert!(sim.observed.states().iter().all(|&z| z == PARKED));
    }

    #[test]
    fn same_seed_same_trace() {
        let m = model(0.05, 0.2);
        assert_eq!(simulate(&m, PARKED, start(), 3000, 9), simulate(&m, PARKED, start(), 3000, 9));
        assert_ne!(simulate(&m, PARKED, start(), 3000, 9), simulate(&m, PARKED, start(), 3000, 10));
    }

    #[test]
    fn geometric_durations() {
        let d = trip_length_distribution(&model(0.05, 0.1), 1_000_000, 4);
        assert!((d.mean() - 10.0).abs() < 0.2, "{}", d.mean());
        let once = trip_length_distribution(&model(0.05, 0.1), 1, 8);
        assert_eq!(once, trip_length_distribution(&model(0.05, 0.1), 1, 8));
    }

    #[test]
    fn hidden_maps_to_observed() {
        let m = DrivingModel::new(
            ModelStructure::new(3).unwrap(),
            DrivingModelParams {
                exit_prob: ExitCurve::constant(0.1),
                entry_dist: vec![0.5, 0.5],
                hidden_trans: vec![vec![0.2, 0.5, 0.3], vec![0.3, 0.3, 0.4]],
                initial_dist: parked_start(3),
            },
        )
        .unwrap();
        let sim = simulate(&m, PARKED, start(), 2000, 2);
        for (h, z) in sim.hidden.iter().zip(sim.observed.states()) {
            assert_eq!(*z, if *h == PARKED { PARKED } else { DRIVING });
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let d = trip_length_distribution(&model(0.05, 0.2), 5000, 1);
        let xs: Vec<f64> = (-200..2000).map(|i| i as f64 * 0.05).collect();
        let total: f64 = d.density_grid(&xs).iter().sum::<f64>() * 0.05;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}
