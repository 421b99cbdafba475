//! Diurnal transition probabilities as B-spline logistic regressions.
//!
//! For a from-state `j` every minute of day `s` is a binomial experiment:
//! `z_j(s)` trials of which `z_j(s) - n_jj(s)` left the state. The logit of
//! the leaving probability is a linear combination of B-spline basis
//! functions over the 1440-minute cycle. Knots are refined greedily: insert a
//! knot at the centre of the worst-fitting interval and keep it only while a
//! likelihood-ratio test says the fit improved.

mod basis;
mod irls;

pub use basis::{build_basis, uniform_knots, SplineBasis};
pub use irls::GlmFit;
pub(crate) use irls::{binomial_loglik, logistic};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_ingest::{MinuteOfDay, TransitionCounts, MINUTES_PER_DAY};
use crate::stats::chi2_critical;
use irls::{fit_binomial, BinomialData};

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("invalid knots: {0}")]
    InvalidKnots(String),
    #[error("no trials observed from state {0}")]
    NoTrials(u8),
    #[error("logistic fit did not converge ({iterations} iterations)")]
    NotConverged { iterations: usize },
    #[error("invalid refinement settings: {0}")]
    InvalidSettings(String),
    #[error("coefficient count {found} does not match basis dimension {expected}")]
    CoefficientCount { expected: usize, found: usize },
}

/// Raw maximum-likelihood ratio `n_jk(s) / z_j(s)`; `None` where no trials exist.
pub fn raw_mle(counts: &TransitionCounts, from: u8, to: u8) -> Vec<Option<f64>> {
    (1..=MINUTES_PER_DAY as u16)
        .map(|s| {
            let s = MinuteOfDay::new(s).unwrap();
            let z = counts.trials(from, s);
            (z > 0).then(|| counts.n(from, to, s) as f64 / z as f64)
        })
        .collect()
}

/// Trials and "left the state" successes for every minute with data.
struct LeavingData {
    minutes: Vec<usize>,
    successes: Vec<f64>,
    trials: Vec<f64>,
}

impl LeavingData {
    fn new(counts: &TransitionCounts, from: u8) -> Result<Self, SplineError> {
        let mut data = LeavingData {
            minutes: Vec::new(),
            successes: Vec::new(),
            trials: Vec::new(),
        };
        for s in 1..=MINUTES_PER_DAY as u16 {
            let m = MinuteOfDay::new(s).unwrap();
            let z = counts.trials(from, m);
            if z > 0 {
                data.minutes.push(s as usize);
                data.trials.push(z as f64);
                data.successes.push((z - counts.n(from, from, m)) as f64);
            }
        }
        if data.minutes.is_empty() {
            return Err(SplineError::NoTrials(from));
        }
        Ok(data)
    }

    fn design(&self, basis: &SplineBasis) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.minutes.len(), basis.dim());
        let mut row = vec![0.0; basis.dim()];
        for (i, &s) in self.minutes.iter().enumerate() {
            basis.eval_into(SplineBasis::minute_position(s), &mut row);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        x
    }

    fn fit(&self, basis: &SplineBasis) -> GlmFit {
        let design = self.design(basis);
        fit_binomial(&BinomialData {
            design: &design,
            successes: &self.successes,
            trials: &self.trials,
        })
    }
}

/// Logistic regression of the probability of leaving `from` on `basis`.
pub fn fit_logistic(
    counts: &TransitionCounts,
    from: u8,
    basis: &SplineBasis,
) -> Result<GlmFit, SplineError> {
    Ok(LeavingData::new(counts, from)?.fit(basis))
}

/// Score vector of the binomial log-likelihood at `coefficients`.
pub fn score(
    counts: &TransitionCounts,
    from: u8,
    basis: &SplineBasis,
    coefficients: &[f64],
) -> Result<Vec<f64>, SplineError> {
    let data = LeavingData::new(counts, from)?;
    let design = data.design(basis);
    Ok(BinomialData {
        design: &design,
        successes: &data.successes,
        trials: &data.trials,
    }
    .score(coefficients))
}

/// Binomial log-likelihood of arbitrary coefficients on `basis`.
pub fn log_likelihood(
    counts: &TransitionCounts,
    from: u8,
    basis: &SplineBasis,
    coefficients: &[f64],
) -> Result<f64, SplineError> {
    let data = LeavingData::new(counts, from)?;
    let mut row = vec![0.0; basis.dim()];
    Ok(data
        .minutes
        .iter()
        .zip(data.successes.iter().zip(&data.trials))
        .map(|(&s, (&y, &z))| {
            basis.eval_into(SplineBasis::minute_position(s), &mut row);
            let eta: f64 = row.iter().zip(coefficients).map(|(b, c)| b * c).sum();
            binomial_loglik(y, z, eta)
        })
        .sum())
}

/// Log-likelihood of the model that reproduces `y / z` exactly.
fn saturated_loglik(y: f64, z: f64) -> f64 {
    let mut ll = 0.0;
    if y > 0.0 {
        ll += y * (y / z).ln();
    }
    if z - y > 0.0 {
        ll += (z - y) * ((z - y) / z).ln();
    }
    ll
}

const PROBABILITY_FLOOR: f64 = 1e-15;

/// Fitted probability over the diurnal cycle with a 1440-entry lookup table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiurnalRecord", into = "DiurnalRecord")]
pub struct DiurnalProbability {
    basis: SplineBasis,
    fit: GlmFit,
    cache: Vec<f64>,
}

/// JSON form: knots, degree, coefficients, log-likelihood.
#[derive(Serialize, Deserialize)]
struct DiurnalRecord {
    knots: Vec<f64>,
    degree: usize,
    #[serde(default)]
    periodic: bool,
    coefficients: Vec<f64>,
    log_likelihood: Option<f64>,
    #[serde(default = "default_true")]
    converged: bool,
    #[serde(default)]
    iterations: usize,
}

fn default_true() -> bool {
    true
}

impl TryFrom<DiurnalRecord> for DiurnalProbability {
    type Error = SplineError;

    fn try_from(r: DiurnalRecord) -> Result<Self, SplineError> {
        let basis = if r.periodic {
            SplineBasis::periodic(&r.knots, r.degree)?
        } else {
            SplineBasis::clamped(&r.knots, r.degree)?
        };
        DiurnalProbability::new(
            basis,
            GlmFit {
                coefficients: r.coefficients,
                log_likelihood: r.log_likelihood.unwrap_or(f64::NAN),
                converged: r.converged,
                iterations: r.iterations,
            },
        )
    }
}

impl From<DiurnalProbability> for DiurnalRecord {
    fn from(d: DiurnalProbability) -> Self {
        DiurnalRecord {
            knots: d.basis.knots().to_vec(),
            degree: d.basis.degree(),
            periodic: d.basis.is_periodic(),
            coefficients: d.fit.coefficients,
            log_likelihood: d.fit.log_likelihood.is_finite().then_some(d.fit.log_likelihood),
            converged: d.fit.converged,
            iterations: d.fit.iterations,
        }
    }
}

impl DiurnalProbability {
    pub fn new(basis: SplineBasis, fit: GlmFit) -> Result<Self, SplineError> {
        if fit.coefficients.len() != basis.dim() {
            return Err(SplineError::CoefficientCount {
                expected: basis.dim(),
                found: fit.coefficients.len(),
            });
        }
        let mut row = vec![0.0; basis.dim()];
        let cache = (1..=MINUTES_PER_DAY)
            .map(|s| {
                basis.eval_into(SplineBasis::minute_position(s), &mut row);
                let eta: f64 = row.iter().zip(&fit.coefficients).map(|(b, c)| b * c).sum();
                logistic(eta).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
            })
            .collect();
        Ok(Self { basis, fit, cache })
    }

    /// Curve with the given logit coefficients (no data attached).
    pub fn from_coefficients(basis: SplineBasis, coefficients: Vec<f64>) -> Result<Self, SplineError> {
        Self::new(
            basis,
            GlmFit {
                coefficients,
                log_likelihood: f64::NAN,
                converged: true,
                iterations: 0,
            },
        )
    }

    /// Time-invariant probability `p` as a one-function spline.
    pub fn constant(p: f64) -> Self {
        assert!(p > 0.0 && p < 1.0, "constant probability must lie in (0,1)");
        let basis = SplineBasis::clamped(&[0.0, MINUTES_PER_DAY as f64], 0).unwrap();
        Self::from_coefficients(basis, vec![(p / (1.0 - p)).ln()]).unwrap()
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn fit(&self) -> &GlmFit {
        &self.fit
    }

    pub fn at(&self, s: MinuteOfDay) -> f64 {
        self.cache[s.index()]
    }

    /// Probabilities for minutes 1..=1440.
    pub fn values(&self) -> &[f64] {
        &self.cache
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnotStep {
    pub knots: Vec<f64>,
    pub log_likelihood: f64,
    /// `2 Δ log L` against the previously accepted model.
    pub lr_statistic: Option<f64>,
    pub critical_value: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct RefinementOutcome {
    pub probability: DiurnalProbability,
    pub history: Vec<KnotStep>,
}

/// Greedy knot insertion guarded by a likelihood-ratio test.
#[derive(Debug, Clone)]
pub struct KnotRefiner {
    pub init_knots: usize,
    pub max_knots: usize,
    pub lr_alpha: f64,
    pub degree: usize,
    pub periodic: bool,
    /// Intervals narrower than twice this (minutes) are never split.
    pub min_interval: f64,
}

impl Default for KnotRefiner {
    fn default() -> Self {
        Self {
            init_knots: 8,
            max_knots: 22,
            lr_alpha: 0.05,
            degree: 3,
            periodic: false,
            min_interval: 2.0,
        }
    }
}

impl KnotRefiner {
    fn basis(&self, knots: &[f64]) -> Result<SplineBasis, SplineError> {
        if self.periodic {
            SplineBasis::periodic(knots, self.degree)
        } else {
            SplineBasis::clamped(knots, self.degree)
        }
    }

    /// Interval with the lowest average log-likelihood per trial relative to
    /// the saturated model (largest deviance per trial), among those wide
    /// enough to split.
    fn worst_interval(&self, data: &LeavingData, basis: &SplineBasis, fit: &GlmFit) -> Option<usize> {
        let knots = basis.knots();
        let n_int = knots.len() - 1;
        let mut ll = vec![0.0; n_int];
        let mut trials = vec![0.0; n_int];
        let mut row = vec![0.0; basis.dim()];
        for (&s, (&y, &z)) in data.minutes.iter().zip(data.successes.iter().zip(&data.trials)) {
            let x = SplineBasis::minute_position(s);
            basis.eval_into(x, &mut row);
            let eta: f64 = row.iter().zip(&fit.coefficients).map(|(b, c)| b * c).sum();
            let i = basis.interval_of(x);
            ll[i] += binomial_loglik(y, z, eta) - saturated_loglik(y, z);
            trials[i] += z;
        }
        (0..n_int)
            .filter(|&i| trials[i] > 0.0 && knots[i + 1] - knots[i] >= 2.0 * self.min_interval)
            .min_by(|&a, &b| (ll[a] / trials[a]).total_cmp(&(ll[b] / trials[b])))
    }

    pub fn run(&self, counts: &TransitionCounts, from: u8) -> Result<RefinementOutcome, SplineError> {
        if self.init_knots < 2 {
            return Err(SplineError::InvalidSettings("init_knots must be at least 2".into()));
        }
        if self.max_knots < self.init_knots {
            return Err(SplineError::InvalidSettings(
                "max_knots must be at least init_knots".into(),
            ));
        }
        if !(self.lr_alpha > 0.0 && self.lr_alpha < 1.0) {
            return Err(SplineError::InvalidSettings("lr_alpha must lie in (0,1)".into()));
        }
        let data = LeavingData::new(counts, from)?;
        let mut knots = uniform_knots(self.init_knots);
        let mut basis = self.basis(&knots)?;
        let mut fit = data.fit(&basis);
        if !fit.converged {
            return Err(SplineError::NotConverged {
                iterations: fit.iterations,
            });
        }
        let mut history = vec![KnotStep {
            knots: knots.clone(),
            log_likelihood: fit.log_likelihood,
            lr_statistic: None,
            critical_value: None,
            accepted: true,
        }];

        while knots.len() < self.max_knots {
            let Some(i) = self.worst_interval(&data, &basis, &fit) else {
                break;
            };
            let mut candidate = knots.clone();
            candidate.insert(i + 1, 0.5 * (knots[i] + knots[i + 1]));
            let cand_basis = self.basis(&candidate)?;
            let cand_fit = data.fit(&cand_basis);
            let stat = 2.0 * (cand_fit.log_likelihood - fit.log_likelihood);
            let df = cand_basis.dim() - basis.dim();
            let crit = chi2_critical(df, self.lr_alpha);
            let accepted = cand_fit.converged && stat > crit;
            history.push(KnotStep {
                knots: candidate.clone(),
                log_likelihood: cand_fit.log_likelihood,
                lr_statistic: Some(stat),
                critical_value: Some(crit),
                accepted,
            });
            if !accepted {
                break;
            }
            knots = candidate;
            basis = cand_basis;
            fit = cand_fit;
        }

        Ok(RefinementOutcome {
            probability: DiurnalProbability::new(basis, fit)?,
            history,
        })
    }
}

/// Adaptive-knot fit of the probability of leaving `from` (clamped cubic
/// basis, see [`KnotRefiner`] for other settings).
pub fn refine_knots(
    counts: &TransitionCounts,
    from: u8,
    init_knots: usize,
    max_knots: usize,
    lr_alpha: f64,
) -> Result<DiurnalProbability, SplineError> {
    KnotRefiner {
        init_knots,
        max_knots,
        lr_alpha,
        ..KnotRefiner::default()
    }
    .run(counts, from)
    .map(|o| o.probability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution};

    fn m(s: u16) -> MinuteOfDay {
        MinuteOfDay::new(s).unwrap()
    }

    /// Counts for the parked state drawn from a known leaving-probability curve.
    fn sample_counts(curve: impl Fn(usize) -> f64, trials: u64, seed: u64) -> TransitionCounts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = TransitionCounts::new(2);
        for s in 1..=MINUTES_PER_DAY {
            let left = Binomial::new(trials, curve(s)).unwrap().sample(&mut rng);
            let idx = m(s as u16);
            for _ in 0..left {
                counts.record(1, 2, idx);
            }
            for _ in 0..trials - left {
                counts.record(1, 1, idx);
            }
        }
        counts
    }

    #[test]
    fn raw_mle_arithmetic() {
        let mut c = TransitionCounts::new(2);
        for _ in 0..3 {
            c.record(1, 2, m(10));
        }
        for _ in 0..7 {
            c.record(1, 1, m(10));
        }
        for _ in 0..7 {
            c.record(1, 1, m(11));
        }
        let p = raw_mle(&c, 1, 2);
        assert_eq!(p[9], Some(0.3));
        assert_eq!(p[10], Some(0.0));
        assert_eq!(p[11], None);
    }

    #[test]
    fn constant_probability_recovered() {
        // 100 trials at each of 1440 minutes: ~1.4e5 Bernoulli draws with p = 0.1
        let counts = sample_counts(|_| 0.1, 100, 11);
        let basis = build_basis(&[0.0, MINUTES_PER_DAY as f64], 3).unwrap();
        let fit = fit_logistic(&counts, 1, &basis).unwrap();
        assert!(fit.converged);
        let d = DiurnalProbability::new(basis, fit).unwrap();
        for &p in d.values() {
            assert!((p - 0.1).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn all_zero_counts_flag_separation() {
        let counts = sample_counts(|_| 0.0, 5, 1);
        let basis = build_basis(&uniform_knots(4), 3).unwrap();
        let fit = fit_logistic(&counts, 1, &basis).unwrap();
        assert!(!fit.converged);
        let d = DiurnalProbability::new(basis, fit).unwrap();
        assert!(d.values().iter().all(|&p| p > 0.0 && p < 1e-6));
    }

    #[test]
    fn no_trials_is_an_error() {
        let counts = TransitionCounts::new(2);
        let basis = build_basis(&uniform_knots(4), 3).unwrap();
        assert_eq!(fit_logistic(&counts, 1, &basis), Err(SplineError::NoTrials(1)));
    }

    #[test]
    fn logistic_sine_recovered() {
        let truth = |s: usize| {
            let x = 2.0 * std::f64::consts::PI * (s as f64 - 0.5) / MINUTES_PER_DAY as f64;
            logistic(-1.0 + 1.5 * x.sin())
        };
        let counts = sample_counts(truth, 1000, 5);
        let d = refine_knots(&counts, 1, 8, 22, 0.05).unwrap();
        let sup = (1..=MINUTES_PER_DAY)
            .map(|s| (d.at(m(s as u16)) - truth(s)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.03, "sup-norm error {sup}");
    }

    #[test]
    fn score_vanishes_at_optimum() {
        let truth = |s: usize| logistic(-2.0 + ((s as f64) / 300.0).cos());
        let counts = sample_counts(truth, 50, 9);
        let basis = build_basis(&uniform_knots(8), 3).unwrap();
        let fit = fit_logistic(&counts, 1, &basis).unwrap();
        assert!(fit.converged);
        let g = score(&counts, 1, &basis, &fit.coefficients).unwrap();
        let sup = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(sup < 1e-6, "analytic score {sup}");
        // central differences of the log-likelihood agree
        let h = 1e-5;
        for k in 0..basis.dim() {
            let mut up = fit.coefficients.clone();
            let mut dn = fit.coefficients.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&counts, 1, &basis, &up).unwrap()
                - log_likelihood(&counts, 1, &basis, &dn).unwrap())
                / (2.0 * h);
            assert!(fd.abs() < 1e-3, "finite-difference gradient {fd}");
        }
    }

    #[test]
    fn constant_process_keeps_initial_knots() {
        let counts = sample_counts(|_| 0.05, 200, 0);
        let out = KnotRefiner {
            init_knots: 8,
            max_knots: 22,
            ..Default::default()
        }
        .run(&counts, 1)
        .unwrap();
        assert_eq!(out.probability.basis().knots().len(), 8);
        let step = &out.history[1];
        assert!(!step.accepted);
        assert!(step.lr_statistic.unwrap() < step.critical_value.unwrap());
    }

    #[test]
    fn max_equal_init_returns_initial_fit() {
        let counts = sample_counts(|s| 0.02 + 0.1 * (s as f64 / 1440.0), 100, 4);
        let basis = build_basis(&uniform_knots(8), 3).unwrap();
        let direct = fit_logistic(&counts, 1, &basis).unwrap();
        let refined = refine_knots(&counts, 1, 8, 8, 0.05).unwrap();
        assert_eq!(refined.basis().knots(), uniform_knots(8).as_slice());
        assert_eq!(refined.fit(), &direct);
    }

    #[test]
    fn accepted_insertions_increase_likelihood() {
        let truth = |s: usize| {
            let h = s as f64 / 60.0;
            0.002 + 0.08 * (-(h - 7.0f64).powi(2) / 0.5).exp() + 0.05 * (-(h - 16.5f64).powi(2)).exp()
        };
        let counts = sample_counts(truth, 400, 21);
        let out = KnotRefiner::default().run(&counts, 1).unwrap();
        let accepted: Vec<_> = out.history.iter().filter(|s| s.accepted).collect();
        assert!(accepted.len() > 1);
        for w in accepted.windows(2) {
            assert!(w[1].log_likelihood > w[0].log_likelihood);
        }
        assert_eq!(
            out.probability.basis().knots().len(),
            accepted.last().unwrap().knots.len()
        );
    }

    #[test]
    fn periodic_flag_is_continuous() {
        let counts = sample_counts(|s| 0.05 + 0.04 * ((s as f64) / 229.0).sin().abs(), 300, 8);
        let out = KnotRefiner {
            periodic: true,
            ..Default::default()
        }
        .run(&counts, 1)
        .unwrap();
        let v = out.probability.values();
        assert!((v[0] - v[MINUTES_PER_DAY - 1]).abs() < 0.01);
        assert!(out.probability.basis().is_periodic());
    }

    #[test]
    fn json_round_trip() {
        let d = DiurnalProbability::from_coefficients(
            build_basis(&uniform_knots(5), 3).unwrap(),
            vec![-3.0, -2.0, -1.0, -2.5, -4.0, -3.0, -2.0],
        )
        .unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"knots\"") && json.contains("\"coefficients\""));
        let back: DiurnalProbability = serde_json::from_str(&json).unwrap();
        assert_eq!(back.values(), d.values());
        assert_eq!(back.at(MinuteOfDay::wrap(1440 + 7)), d.at(m(7)));
    }

    #[test]
    fn probabilities_stay_open_interval() {
        let d = DiurnalProbability::from_coefficients(
            build_basis(&uniform_knots(3), 1).unwrap(),
            vec![-900.0, 0.0, 900.0],
        )
        .unwrap();
        assert!(d.values().iter().all(|&p| p > 0.0 && p < 1.0));
    }
}
