//! Stochastic driving-pattern models and cost-optimal electric-vehicle
//! charging.
//!
//! The pipeline: minute-resolution trip logs ([`data_ingest`]) feed a
//! B-spline logistic fit of the diurnal departure probability
//! ([`spline_glm`]) and an inhomogeneous hidden Markov model of driving
//! ([`driving_model`]). The model drives a finite-horizon Markov decision
//! process solved by backward induction ([`mdp_solver`]); resulting policies
//! and rule-of-thumb baselines are replayed against traces in [`policy_sim`].

pub mod data_ingest;
pub mod driving_model;
pub mod mdp_solver;
pub mod policy_sim;
mod optim;
pub mod spline_glm;
pub mod stats;
pub mod synthetic;
