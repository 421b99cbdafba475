//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use evcharge::data_ingest::{parse_timestamp, DrivingTrace, MinuteOfDay};
use evcharge::driving_model::{DrivingModel, DrivingModelParams, ExitCurve, ModelStructure};
use evcharge::mdp_solver::MdpConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> DrivingModel {
    let values = (0..1440).map(|_| rng.random_range(0.0..0.6)).collect();
    DrivingModel::new(
        ModelStructure::new(n).unwrap(),
        DrivingModelParams {
            exit_prob: ExitCurve::Table { values },
            entry_dist: random_simplex(rng, n - 1),
            hidden_trans: (1..n).map(|_| random_simplex(rng, n)).collect(),
            initial_dist: random_simplex(rng, n),
        },
    )
    .unwrap()
}

pub fn random_trace(rng: &mut ChaCha8Rng, len: usize) -> DrivingTrace {
    let start = parse_timestamp("2003-01-06T00:00").unwrap() + chrono::Duration::minutes(rng.random_range(0..1440));
    let states = (0..len).map(|_| rng.random_range(1..=2u8)).collect();
    DrivingTrace::new(start, states).unwrap()
}

/// Transition probability assembled straight from the parameters.
fn p(params: &DrivingModelParams, s: MinuteOfDay, from: usize, to: usize) -> f64 {
    if from == 1 {
        let q = params.exit_prob.at(s);
        if to == 1 {
            1.0 - q
        } else {
            q * params.entry_dist[to - 2]
        }
    } else {
        params.hidden_trans[from - 2][to - 1]
    }
}

fn emits(state: usize, symbol: u8) -> bool {
    (state == 1) == (symbol == 1)
}

/// Likelihood by summing over every hidden path.
pub fn brute_force_likelihood(model: &DrivingModel, trace: &DrivingTrace) -> f64 {
    let n = model.n_states();
    let z = trace.states();
    let len = z.len();
    let mut path = vec![1usize; len];
    let mut total = 0.0;
    loop {
        if path.iter().zip(z).all(|(&x, &s)| emits(x, s)) {
            let mut prob = model.params.initial_dist[path[0] - 1];
            for t in 0..len - 1 {
                prob *= p(&model.params, trace.minute_of_day(t), path[t], path[t + 1]);
            }
            total += prob;
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == len {
                return total;
            }
            path[i] += 1;
            if path[i] <= n {
                break;
            }
            path[i] = 1;
            i += 1;
        }
    }
}

/// Small decision-process instance for the expectimax oracle.
pub struct SmallMdp<'a> {
    pub model: &'a DrivingModel,
    pub cfg: &'a MdpConfig,
    pub prices: &'a [f64],
    pub start: MinuteOfDay,
    pub levels: usize,
    pub actions: &'a [f64],
}

impl SmallMdp<'_> {
    fn level(&self, j: usize) -> f64 {
        self.cfg.e_min + (self.cfg.e_max - self.cfg.e_min) * j as f64 / (self.levels - 1) as f64
    }

    /// Best expected revenue from `(t, level j, desired state x)` by full
    /// enumeration of actions and outcomes, no memoisation.
    pub fn value(&self, t: usize, j: usize, x: usize) -> f64 {
        let c = self.cfg;
        let horizon = c.horizon_minutes;
        let mean_price = self.prices[..horizon].iter().sum::<f64>() / horizon as f64;
        let e = self.level(j);
        if t == horizon {
            return c.eta_d * e * mean_price / 1000.0;
        }
        let empty = j == 0;
        let mut best = f64::NEG_INFINITY;
        for &u in self.actions {
            let x_a = if x != 1 && empty { 1 } else { x };
            let mut u_a = if x != 1 && !empty { 0.0 } else { u };
            if u_a > 0.0 {
                u_a = u_a.min((c.e_max - e) / (c.eta_c * c.omega));
            } else if u_a < 0.0 {
                u_a = u_a.max(-(e - c.e_min) * c.eta_d / c.omega);
            }
            let gain = if u_a >= 0.0 { c.eta_c } else { 1.0 / c.eta_d };
            let drive = if x_a == 1 { 0.0 } else { c.speed[0] * c.mu[0] * c.omega };
            let next_e = (e + gain * c.omega * u_a - drive).clamp(c.e_min, c.e_max);
            let reward = -self.prices[t] / 1000.0 * c.omega * u_a - if x != 1 && empty { c.omega * c.phi } else { 0.0 };
            let step = (c.e_max - c.e_min) / (self.levels - 1) as f64;
            let pos = (next_e - c.e_min) / step;
            let lo = (pos.floor() as usize).min(self.levels - 2);
            let w = (pos - lo as f64).clamp(0.0, 1.0);
            let s = self.start.advance(t);
            let mut future = 0.0;
            for nx in 1..=self.model.n_states() {
                let q = p(&self.model.params, s, x, nx);
                if q == 0.0 {
                    continue;
                }
                let mut v = (1.0 - w) * self.value(t + 1, lo, nx);
                if w > 0.0 {
                    v += w * self.value(t + 1, lo + 1, nx);
                }
                future += q * v;
            }
            best = best.max(reward + c.beta * future);
        }
        best
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(a.abs()) + 1e-15
}
