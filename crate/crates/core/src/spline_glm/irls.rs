//! Binomial-logit GLM fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const MAX_ITERATIONS: usize = 100;
const DEVIANCE_TOLERANCE: f64 = 1e-8;
/// Newton steps taken after the deviance criterion is met.
const POLISH_STEPS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Binomial observations: `successes[i]` out of `trials[i]` at design row `i`.
pub(crate) struct BinomialData<'a> {
    pub design: &'a DMatrix<f64>,
    pub successes: &'a [f64],
    pub trials: &'a [f64],
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `y log p + (z - y) log(1 - p)` for `p = logistic(eta)`.
pub(crate) fn binomial_loglik(y: f64, z: f64, eta: f64) -> f64 {
    let mut ll = 0.0;
    if y > 0.0 {
        ll -= y * softplus(-eta);
    }
    if z - y > 0.0 {
        ll -= (z - y) * softplus(eta);
    }
    ll
}

impl BinomialData<'_> {
    fn loglik(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .zip(self.successes.iter().zip(self.trials))
            .map(|(&e, (&y, &z))| binomial_loglik(y, z, e))
            .sum()
    }

    /// Score vector `Xᵀ(y - z p)`.
    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.design * DVector::from_column_slice(beta);
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter()
                .zip(self.successes.iter().zip(self.trials))
                .map(|(&e, (&y, &z))| y - z * logistic(e)),
        );
        (self.design.transpose() * resid).iter().copied().collect()
    }

    /// Every observation sits at 0 or at its trial count: the likelihood has
    /// no finite maximizer.
    fn completely_separated(&self) -> bool {
        let all_zero = self.successes.iter().all(|&y| y == 0.0);
        let all_full = self
            .successes
            .iter()
            .zip(self.trials)
            .all(|(&y, &z)| y == z);
        all_zero || all_full
    }
}

fn solve_spd(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = h.diagonal().amax().max(1e-300);
    for jitter in [1e-12, 1e-9, 1e-6] {
        let mut hj = h.clone();
        for i in 0..hj.nrows() {
            hj[(i, i)] += jitter * scale;
        }
        if let Some(ch) = hj.cholesky() {
            return Some(ch.solve(g));
        }
    }
    h.clone().svd(true, true).solve(g, 1e-12 * scale).ok()
}

pub(crate) fn fit_binomial(data: &BinomialData<'_>) -> GlmFit {
    let x = data.design;
    let p = x.ncols();
    let total_y: f64 = data.successes.iter().sum();
    let total_z: f64 = data.trials.iter().sum();
    // partition of unity: a constant coefficient vector is a constant curve
    let rate = ((total_y + 0.5) / (total_z + 1.0)).clamp(1e-12, 1.0 - 1e-12);
    let mut beta = DVector::from_element(p, (rate / (1.0 - rate)).ln());
    let mut eta = x * &beta;
    let mut ll = data.loglik(&eta);
    let mut iterations = 0;
    let mut met = false;
    let mut polish = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut weights = Vec::with_capacity(eta.len());
        let mut resid = Vec::with_capacity(eta.len());
        for (&e, (&y, &z)) in eta.iter().zip(data.successes.iter().zip(data.trials)) {
            let mu = logistic(e);
            weights.push(z * mu * (1.0 - mu));
            resid.push(y - z * mu);
        }
        let mut h = DMatrix::zeros(p, p);
        let mut g = DVector::zeros(p);
        for (i, row) in x.row_iter().enumerate() {
            let w = weights[i];
            for a in 0..p {
                let xa = row[a];
                if xa == 0.0 {
                    continue;
                }
                g[a] += xa * resid[i];
                for b in a..p {
                    h[(a, b)] += w * xa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        let Some(step) = solve_spd(&h, &g) else {
            break;
        };
        // step halving keeps the log-likelihood non-decreasing
        let mut t = 1.0;
        let (mut new_beta, mut new_eta, mut new_ll);
        loop {
            new_beta = &beta + &step * t;
            new_eta = x * &new_beta;
            new_ll = data.loglik(&new_eta);
            if (new_ll.is_finite() && new_ll >= ll - 1e-12 * ll.abs()) || t < 1e-6 {
                break;
            }
            t *= 0.5;
        }
        let dev_old = -2.0 * ll;
        let dev = -2.0 * new_ll;
        beta = new_beta;
        eta = new_eta;
        ll = new_ll;
        if met {
            polish += 1;
            if polish >= POLISH_STEPS {
                break;
            }
        } else if (dev - dev_old).abs() / (dev.abs() + 0.1) < DEVIANCE_TOLERANCE {
            met = true;
        }
    }

    let finite = beta.iter().all(|b| b.is_finite()) && ll.is_finite();
    GlmFit {
        coefficients: beta.iter().copied().collect(),
        log_likelihood: ll,
        converged: met && finite && !data.completely_separated(),
        iterations,
    }
}
