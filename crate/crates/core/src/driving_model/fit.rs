use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{parked_start, DrivingModel, DrivingModelParams, ExitCurve, ModelError, ModelStructure};
use crate::data_ingest::{count_transitions, DayFilter, DrivingTrace, MinuteOfDay, DRIVING, MINUTES_PER_DAY, PARKED};
use crate::optim::{bfgs, BfgsOptions};
use crate::stats::chi2_critical;

const LOGIT_BOUND: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Random starts in addition to any warm starts.
    pub n_starts: usize,
    pub seed: u64,
    /// Days whose departures enter the fit.
    pub day_filter: DayFilter,
    pub optimizer: BfgsOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 20,
            seed: 0,
            day_filter: DayFilter::All,
            optimizer: BfgsOptions {
                gtol: 1e-7,
                ..BfgsOptions::default()
            },
        }
    }
}

/// Trip durations of a trace. Under deterministic emissions the likelihood
/// of the time-invariant parameters depends on the data only through these
/// histograms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripStatistics {
    /// `complete[L]`: trips of `L` driving minutes followed by a parked minute.
    pub complete: Vec<u64>,
    /// `censored[L]`: trips still running when the trace ends.
    pub censored: Vec<u64>,
}

impl TripStatistics {
    /// A driving run at the very start of the trace has no observed
    /// departure and is skipped.
    pub fn from_trace(trace: &DrivingTrace, filter: DayFilter) -> Self {
        let mut stats = TripStatistics::default();
        let states = trace.states();
        let mut t = states.iter().position(|&z| z == PARKED).unwrap_or(states.len());
        while t + 1 < states.len() {
            if !(states[t] == PARKED && states[t + 1] == DRIVING) {
                t += 1;
                continue;
            }
            let admitted = filter.admits(trace.timestamp(t).date());
            let begin = t + 1;
            let mut end = begin;
            while end < states.len() && states[end] == DRIVING {
                end += 1;
            }
            if admitted {
                let bucket = if end < states.len() {
                    &mut stats.complete
                } else {
                    &mut stats.censored
                };
                let len = end - begin;
                if bucket.len() <= len {
                    bucket.resize(len + 1, 0);
                }
                bucket[len] += 1;
            }
            t = end;
        }
        stats
    }

    pub fn n_trips(&self) -> u64 {
        self.complete.iter().chain(&self.censored).sum()
    }

    pub fn mean_duration(&self) -> f64 {
        let sum: u64 = self.complete.iter().enumerate().map(|(l, c)| l as u64 * c).sum::<u64>()
            + self.censored.iter().enumerate().map(|(l, c)| l as u64 * c).sum::<u64>();
        sum as f64 / self.n_trips().max(1) as f64
    }

    /// Log-likelihood of the trip histograms:
    /// `Σ log(eᵀ A^{L-1} b)` over complete trips plus `Σ log(eᵀ A^{L-1} 1)`
    /// over censored ones, with `A` the driving block and `b` the return column.
    pub fn log_likelihood(&self, entry: &[f64], hidden: &[Vec<f64>]) -> f64 {
        let d = entry.len();
        let max_len = self.complete.len().max(self.censored.len());
        let mut v = entry.to_vec();
        let mut next = vec![0.0; d];
        let mut log_scale = 0.0;
        let mut ll = 0.0;
        for len in 1..max_len {
            let c = self.complete.get(len).copied().unwrap_or(0);
            if c > 0 {
                let p: f64 = v.iter().zip(hidden).map(|(vi, row)| vi * row[0]).sum();
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += c as f64 * (p.ln() + log_scale);
            }
            let c = self.censored.get(len).copied().unwrap_or(0);
            if c > 0 {
                let p: f64 = v.iter().sum();
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                ll += c as f64 * (p.ln() + log_scale);
            }
            for (j, slot) in next.iter_mut().enumerate() {
                *slot = v.iter().zip(hidden).map(|(vi, row)| vi * row[j + 1]).sum();
            }
            let s: f64 = next.iter().sum();
            if s <= 0.0 {
                // every remaining trip is impossible
                let remaining: u64 = (len + 1..max_len)
                    .map(|l| self.complete.get(l).unwrap_or(&0) + self.censored.get(l).unwrap_or(&0))
                    .sum();
                return if remaining > 0 { f64::NEG_INFINITY } else { ll };
            }
            log_scale += s.ln();
            for (vi, ni) in v.iter_mut().zip(&next) {
                *vi = ni / s;
            }
        }
        ll
    }
}

/// Log-likelihood contribution of the parked rows under a fixed exit curve.
fn exit_log_likelihood(trace: &DrivingTrace, exit: &ExitCurve, filter: DayFilter) -> f64 {
    let counts = count_transitions(trace, filter);
    let mut ll = 0.0;
    for s in 1..=MINUTES_PER_DAY as u16 {
        let s = MinuteOfDay::new(s).unwrap();
        let p = exit.at(s);
        let stay = counts.n(PARKED, PARKED, s);
        let leave = counts.n(PARKED, DRIVING, s);
        if stay > 0 {
            ll += stay as f64 * (1.0 - p).ln();
        }
        if leave > 0 {
            ll += leave as f64 * p.ln();
        }
    }
    ll
}

fn softmax_with_reference(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut out = Vec::with_capacity(logits.len() + 1);
    out.push((-m).exp());
    out.extend(logits.iter().map(|l| (l - m).exp()));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

/// Unconstrained coordinates: `d - 1` entry logits against the first
/// driving state, then for each driving row `d` logits against the parked column.
fn unpack(theta: &[f64], d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let entry = softmax_with_reference(&theta[..d - 1]);
    let hidden = (0..d)
        .map(|i| {
            let off = d - 1 + i * d;
            softmax_with_reference(&theta[off..off + d])
        })
        .collect();
    (entry, hidden)
}

fn logit(p: f64, reference: f64) -> f64 {
    (p.max(1e-300).ln() - reference.max(1e-300).ln()).clamp(-LOGIT_BOUND, LOGIT_BOUND)
}

fn pack(entry: &[f64], hidden: &[Vec<f64>]) -> Vec<f64> {
    let mut theta: Vec<f64> = entry[1..].iter().map(|&p| logit(p, entry[0])).collect();
    for row in hidden {
        theta.extend(row[1..].iter().map(|&p| logit(p, row[0])));
    }
    theta
}

/// Split driving state `k` (0-based among driving states) into two
/// lumpable copies. The trip-length distribution is unchanged.
fn split_state(entry: &[f64], hidden: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut e = entry.to_vec();
    e[k] /= 2.0;
    e.push(e[k]);
    let mut rows: Vec<Vec<f64>> = hidden
        .iter()
        .map(|row| {
            let mut r = row.clone();
            r[k + 1] /= 2.0;
            r.push(r[k + 1]);
            r
        })
        .collect();
    rows.push(rows[k].clone());
    (e, rows)
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: DrivingModel,
    /// Full log-likelihood, including the exit-curve terms.
    pub log_likelihood: f64,
    pub converged: bool,
    pub starts: usize,
}

struct Problem<'a> {
    stats: &'a TripStatistics,
    d: usize,
    scale: f64,
}

impl Problem<'_> {
    fn objective(&self, theta: &[f64]) -> f64 {
        let (entry, hidden) = unpack(theta, self.d);
        -self.stats.log_likelihood(&entry, &hidden) / self.scale
    }
}

fn random_start(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut theta: Vec<f64> = (0..d - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
    for i in 0..d {
        for j in 0..d {
            theta.push(if i == j {
                rng.random_range(0.0..4.0)
            } else {
                rng.random_range(-2.0..2.0)
            });
        }
    }
    theta
}

fn fit_from_stats(
    structure: ModelStructure,
    stats: &TripStatistics,
    exit: &ExitCurve,
    exit_ll: f64,
    warm: &[Vec<f64>],
    opts: &FitOptions,
) -> Result<FittedModel, ModelError> {
    if stats.n_trips() == 0 {
        return Err(ModelError::NoTrips);
    }
    let d = structure.n_states() - 1;
    let problem = Problem {
        stats,
        d,
        scale: stats.n_trips() as f64,
    };
    let mut starts: Vec<Vec<f64>> = warm.to_vec();
    for i in 0..opts.n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(i as u64);
        starts.push(random_start(d, &mut rng));
    }
    let results: Vec<_> = starts
        .par_iter()
        .map(|x0| bfgs(|x| problem.objective(x), x0, &opts.optimizer))
        .collect();
    let best = results
        .iter()
        .filter(|m| m.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or(ModelError::NoTrips)?;
    let converged = results.iter().any(|m| m.converged && m.value.is_finite());
    let (entry, hidden) = unpack(&best.x, d);
    let hidden_ll = stats.log_likelihood(&entry, &hidden);
    let model = DrivingModel::new(
        structure,
        DrivingModelParams {
            exit_prob: exit.clone(),
            entry_dist: entry,
            hidden_trans: hidden,
            initial_dist: parked_start(structure.n_states()),
        },
    )?;
    let fitted = FittedModel {
        model,
        log_likelihood: exit_ll + hidden_ll,
        converged,
        starts: starts.len(),
    };
    if converged {
        Ok(fitted)
    } else {
        Err(ModelError::NotConverged {
            best: Box::new(fitted),
        })
    }
}

/// Maximum-likelihood entry distribution and driving rows with the exit
/// curve held fixed. Multi-start quasi-Newton on softmax coordinates.
pub fn fit_time_invariant(
    structure: ModelStructure,
    trace: &DrivingTrace,
    exit: &ExitCurve,
    opts: &FitOptions,
) -> Result<FittedModel, ModelError> {
    let stats = TripStatistics::from_trace(trace, opts.day_filter);
    let exit_ll = exit_log_likelihood(trace, exit, opts.day_filter);
    fit_from_stats(structure, &stats, exit, exit_ll, &[], opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStep {
    pub n_states: usize,
    pub log_likelihood: f64,
    /// `2 Δ log L` against the previous order.
    pub lr_statistic: Option<f64>,
    pub df: Option<usize>,
    pub critical_value: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OrderSelection {
    pub fitted: FittedModel,
    pub steps: Vec<OrderStep>,
}

fn warm_starts(prev: &DrivingModelParams) -> Vec<Vec<f64>> {
    (0..prev.entry_dist.len())
        .map(|k| {
            let (e, h) = split_state(&prev.entry_dist, &prev.hidden_trans, k);
            pack(&e, &h)
        })
        .collect()
}

/// Fits `N = 2, 3, …, max_states` and keeps adding a driving state while the
/// likelihood-ratio test rejects the smaller model. Each order is warm
/// started from exact splits of the previous optimum, so the ladder of
/// log-likelihoods is non-decreasing.
pub fn select_model_order(
    trace: &DrivingTrace,
    exit: &ExitCurve,
    max_states: usize,
    lr_alpha: f64,
    opts: &FitOptions,
) -> Result<OrderSelection, ModelError> {
    let stats = TripStatistics::from_trace(trace, opts.day_filter);
    let exit_ll = exit_log_likelihood(trace, exit, opts.day_filter);
    let structure = ModelStructure::new(2)?;
    let mut current = fit_from_stats(structure, &stats, exit, exit_ll, &[], opts)?;
    let mut steps = vec![OrderStep {
        n_states: 2,
        log_likelihood: current.log_likelihood,
        lr_statistic: None,
        df: None,
        critical_value: None,
        accepted: true,
    }];
    for n in 3..=max_states {
        let structure = ModelStructure::new(n)?;
        let warm = warm_starts(&current.model.params);
        let candidate = fit_from_stats(structure, &stats, exit, exit_ll, &warm, opts)?;
        let lr = 2.0 * (candidate.log_likelihood - current.log_likelihood);
        let df = structure.free_parameters() - current.model.structure.free_parameters();
        let critical = chi2_critical(df, lr_alpha);
        let accepted = lr > critical;
        steps.push(OrderStep {
            n_states: n,
            log_likelihood: candidate.log_likelihood,
            lr_statistic: Some(lr),
            df: Some(df),
            critical_value: Some(critical),
            accepted,
        });
        if !accepted {
            break;
        }
        current = candidate;
    }
    Ok(OrderSelection {
        fitted: current,
        steps,
    })
}
