//! Inhomogeneous Markov chain of vehicle use with hidden driving states.
//!
//! State 1 is "parked"; states `2..=N` are driving states that all emit the
//! observed symbol "driving". Only the probability of leaving the parked
//! state varies with the minute of day. It is split over the driving states
//! by a time-invariant entry distribution. Rows of the driving states are
//! time-invariant.

mod fit;
mod likelihood;
mod simulate;

pub use fit::{
    fit_time_invariant, select_model_order, FitOptions, FittedModel, OrderSelection, OrderStep,
    TripStatistics,
};
pub use likelihood::hmm_log_likelihood;
pub use simulate::{simulate, trip_length_distribution, SimulatedDriving, TripLengthDistribution};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_ingest::{MinuteOfDay, DRIVING, MINUTES_PER_DAY, PARKED};
use crate::spline_glm::DiurnalProbability;

pub const MODEL_SCHEMA: &str = "evcharge/driving-model/v1";

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("a model needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("trace symbol {symbol} at minute {index} is not an observable symbol")]
    IncompatibleTrace { index: usize, symbol: u8 },
    #[error("trace contains no trips")]
    NoTrips,
    #[error("no start converged; best log-likelihood {}", best.log_likelihood)]
    NotConverged { best: Box<FittedModel> },
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model schema `{0}`")]
    Schema(String),
}

/// Number of states and which observed symbol each one emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStructure {
    n_states: usize,
}

impl ModelStructure {
    pub fn new(n_states: usize) -> Result<Self, ModelError> {
        if n_states < 2 {
            return Err(ModelError::TooFewStates(n_states));
        }
        Ok(Self { n_states })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn parked_state(&self) -> u8 {
        PARKED
    }

    pub fn driving_states(&self) -> std::ops::RangeInclusive<u8> {
        2..=self.n_states as u8
    }

    pub fn is_driving(&self, state: u8) -> bool {
        state >= 2
    }

    /// Observed symbol emitted by `state`.
    pub fn observable(&self, state: u8) -> u8 {
        if state == PARKED {
            PARKED
        } else {
            DRIVING
        }
    }

    /// Free parameters of the time-invariant part: the entry distribution
    /// and the driving-state rows.
    pub fn free_parameters(&self) -> usize {
        let d = self.n_states - 1;
        d * d + d - 1
    }

    pub fn emissions(&self) -> StateDistributionMatrix {
        StateDistributionMatrix {
            structure: *self,
        }
    }
}

/// Deterministic emission probabilities `d_zk = P(Z = z | X = k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateDistributionMatrix {
    structure: ModelStructure,
}

impl StateDistributionMatrix {
    pub fn d(&self, symbol: u8, state: u8) -> f64 {
        if self.structure.observable(state) == symbol {
            1.0
        } else {
            0.0
        }
    }

    /// Column `k` of the matrix over symbols `1..=2`.
    pub fn column(&self, state: u8) -> [f64; 2] {
        [self.d(PARKED, state), self.d(DRIVING, state)]
    }
}

/// Diurnal probability of leaving the parked state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitCurve {
    /// Fitted B-spline logistic curve.
    Spline(DiurnalProbability),
    /// Tabulated values for minutes 1..=1440; zeros allowed.
    Table { values: Vec<f64> },
}

impl ExitCurve {
    pub fn constant(p: f64) -> Self {
        ExitCurve::Table {
            values: vec![p; MINUTES_PER_DAY],
        }
    }

    pub fn at(&self, s: MinuteOfDay) -> f64 {
        match self {
            ExitCurve::Spline(d) => d.at(s),
            ExitCurve::Table { values } => values[s.index()],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            ExitCurve::Spline(d) => d.values().to_vec(),
            ExitCurve::Table { values } => values.clone(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if let ExitCurve::Table { values } = self {
            if values.len() != MINUTES_PER_DAY {
                return Err(ModelError::InvalidParams(format!(
                    "exit table needs {MINUTES_PER_DAY} values, got {}",
                    values.len()
                )));
            }
        }
        if self.values().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ModelError::InvalidParams("exit probabilities must lie in [0,1]".into()));
        }
        Ok(())
    }
}

impl From<DiurnalProbability> for ExitCurve {
    fn from(d: DiurnalProbability) -> Self {
        ExitCurve::Spline(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingModelParams {
    pub exit_prob: ExitCurve,
    /// Distribution over driving states `2..=N` when leaving the parked state.
    pub entry_dist: Vec<f64>,
    /// Rows for driving states `2..=N`, each over all `N` states.
    pub hidden_trans: Vec<Vec<f64>>,
    /// Distribution of the first state.
    pub initial_dist: Vec<f64>,
}

/// Row-major `N × N` transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `P(X_{t+1} = to | X_t = from)` with 1-based state ids.
    pub fn p(&self, from: u8, to: u8) -> f64 {
        self.data[(from as usize - 1) * self.n + to as usize - 1]
    }

    pub fn row(&self, from: u8) -> &[f64] {
        let i = from as usize - 1;
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingModel {
    pub structure: ModelStructure,
    pub params: DrivingModelParams,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    structure: ModelStructure,
    params: DrivingModelParams,
}

fn check_distribution(name: &str, v: &[f64], len: usize) -> Result<(), ModelError> {
    if v.len() != len {
        return Err(ModelError::InvalidParams(format!(
            "{name} has {} entries, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ModelError::InvalidParams(format!("{name} has entries outside [0,1]")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(ModelError::InvalidParams(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// Initial distribution concentrated on the parked state.
pub fn parked_start(n_states: usize) -> Vec<f64> {
    let mut d = vec![0.0; n_states];
    d[0] = 1.0;
    d
}

impl DrivingModel {
    pub fn new(structure: ModelStructure, params: DrivingModelParams) -> Result<Self, ModelError> {
        let model = Self { structure, params };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.structure.n_states();
        self.params.exit_prob.validate()?;
        check_distribution("entry_dist", &self.params.entry_dist, n - 1)?;
        check_distribution("initial_dist", &self.params.initial_dist, n)?;
        if self.params.hidden_trans.len() != n - 1 {
            return Err(ModelError::InvalidParams(format!(
                "hidden_trans has {} rows, expected {}",
                self.params.hidden_trans.len(),
                n - 1
            )));
        }
        for (i, row) in self.params.hidden_trans.iter().enumerate() {
            check_distribution(&format!("hidden_trans row {}", i + 2), row, n)?;
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.structure.n_states()
    }

    pub fn exit_probability(&self, s: MinuteOfDay) -> f64 {
        self.params.exit_prob.at(s)
    }

    /// `P(s)`: row 1 is `[1 - p(s), p(s) · entry]`, the rest are the
    /// time-invariant driving rows.
    pub fn transition_matrix_at(&self, s: MinuteOfDay) -> TransitionMatrix {
        let n = self.n_states();
        let mut data = Vec::with_capacity(n * n);
        let p = self.exit_probability(s);
        data.push(1.0 - p);
        data.extend(self.params.entry_dist.iter().map(|e| p * e));
        for row in &self.params.hidden_trans {
            data.extend_from_slice(row);
        }
        TransitionMatrix { n, data }
    }

    /// Transition matrices for minutes 1..=1440.
    pub fn transition_table(&self) -> Vec<TransitionMatrix> {
        (1..=MINUTES_PER_DAY as u16)
            .map(|s| self.transition_matrix_at(MinuteOfDay::new(s).unwrap()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            structure: self.structure,
            params: self.params.clone(),
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(raw)?;
        if file.schema != MODEL_SCHEMA {
            return Err(ModelError::Schema(file.schema));
        }
        ModelStructure::new(file.structure.n_states)?;
        DrivingModel::new(file.structure, file.params)
    }
}
