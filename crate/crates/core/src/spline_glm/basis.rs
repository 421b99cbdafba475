use serde::{Deserialize, Serialize};

use super::SplineError;
use crate::data_ingest::MINUTES_PER_DAY;

pub(crate) const DAY: f64 = MINUTES_PER_DAY as f64;

/// B-spline basis on `[0, 1440]`, either clamped at both ends or wrapped
/// periodically across midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRecord", into = "BasisRecord")]
pub struct SplineBasis {
    knots: Vec<f64>,
    degree: usize,
    periodic: bool,
    /// Full knot sequence used by the Cox–de Boor recursion.
    extended: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisRecord {
    knots: Vec<f64>,
    degree: usize,
    #[serde(default)]
    periodic: bool,
}

impl TryFrom<BasisRecord> for SplineBasis {
    type Error = SplineError;

    fn try_from(r: BasisRecord) -> Result<Self, SplineError> {
        if r.periodic {
            SplineBasis::periodic(&r.knots, r.degree)
        } else {
            SplineBasis::clamped(&r.knots, r.degree)
        }
    }
}

impl From<SplineBasis> for BasisRecord {
    fn from(b: SplineBasis) -> Self {
        BasisRecord {
            knots: b.knots,
            degree: b.degree,
            periodic: b.periodic,
        }
    }
}

fn check_knots(knots: &[f64]) -> Result<(), SplineError> {
    if knots.len() < 2 {
        return Err(SplineError::InvalidKnots("at least two knots required".into()));
    }
    if knots[0] != 0.0 || knots[knots.len() - 1] != DAY {
        return Err(SplineError::InvalidKnots(format!(
            "knots must start at 0 and end at {DAY}"
        )));
    }
    if knots.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(SplineError::InvalidKnots("knots must be strictly increasing".into()));
    }
    Ok(())
}

/// `count` knots with one at each endpoint and equal spacing.
pub fn uniform_knots(count: usize) -> Vec<f64> {
    assert!(count >= 2);
    (0..count)
        .map(|i| DAY * i as f64 / (count - 1) as f64)
        .collect()
}

/// Clamped basis of the given degree on `knots`.
pub fn build_basis(knots: &[f64], degree: usize) -> Result<SplineBasis, SplineError> {
    SplineBasis::clamped(knots, degree)
}

impl SplineBasis {
    pub fn clamped(knots: &[f64], degree: usize) -> Result<Self, SplineError> {
        check_knots(knots)?;
        let mut extended = Vec::with_capacity(knots.len() + 2 * degree);
        extended.extend(std::iter::repeat_n(knots[0], degree));
        extended.extend_from_slice(knots);
        extended.extend(std::iter::repeat_n(knots[knots.len() - 1], degree));
        Ok(Self {
            knots: knots.to_vec(),
            degree,
            periodic: false,
            extended,
        })
    }

    /// Periodic basis with period 1440: `knots.len() - 1` functions that
    /// join smoothly at midnight.
    pub fn periodic(knots: &[f64], degree: usize) -> Result<Self, SplineError> {
        check_knots(knots)?;
        let intervals = knots.len() - 1;
        let p = degree as i64;
        let l = intervals as i64;
        let extended = (-p..=l + p)
            .map(|j| {
                let (q, r) = (j.div_euclid(l), j.rem_euclid(l));
                knots[r as usize] + DAY * q as f64
            })
            .collect();
        Ok(Self {
            knots: knots.to_vec(),
            degree,
            periodic: true,
            extended,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn dim(&self) -> usize {
        if self.periodic {
            self.knots.len() - 1
        } else {
            self.knots.len() + self.degree - 1
        }
    }

    /// Index of the knot interval `[knots[i], knots[i+1])` containing `x`.
    pub fn interval_of(&self, x: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.partition_point(|&k| k <= x) {
            0 => 0,
            i => (i - 1).min(last),
        }
    }

    /// Nonzero basis values at `x` as `(first index, values)`; the values
    /// belong to consecutive (unwrapped) functions starting at the index.
    fn local(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let x = if self.periodic {
            x.rem_euclid(DAY)
        } else {
            x.clamp(0.0, DAY)
        };
        let span = p + self.interval_of(x);
        let t = &self.extended;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - p, n)
    }

    /// All `dim()` basis values at position `x` (minutes).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (first, values) = self.local(x);
        let dim = self.dim();
        for (k, v) in values.into_iter().enumerate() {
            let idx = if self.periodic { (first + k) % dim } else { first + k };
            out[idx] += v;
        }
    }

    /// Evaluation position of minute `s` (1-based): the minute's midpoint.
    pub fn minute_position(s: usize) -> f64 {
        s as f64 - 0.5
    }
}
