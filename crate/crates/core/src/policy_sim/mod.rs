//! Replays charging policies against driving traces and hourly prices.
//!
//! Energy is carried continuously. Reported costs are cash only: the
//! stranding penalty shapes optimal policies but is never billed.

mod optimal;
mod rules;

pub use optimal::{RollingPolicy, TablePolicy};
pub use rules::{make_rule_of_thumb, RuleKind, RuleOfThumbSpec};

use std::io::{self, Write};

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::data_ingest::{DrivingTrace, IngestError, MinuteOfDay, PriceSeries, MINUTES_PER_DAY, PARKED};
use crate::mdp_solver::{actual_charge, actual_state, feasible_charge, project_energy, step_energy, MdpConfig, MdpError, ENERGY_TOLERANCE};

pub const TRACE_HEADER: &str = "t,minute,soc_kwh,action_kw,price,driving_state";
pub const SUMMARY_HEADER: &str = "policy,phi,mean_daily_cost,stranded_events,energy_bought_kwh,energy_sold_kwh";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("prices do not cover the driving trace: {0}")]
    Span(#[from] IngestError),
    #[error("policy covers {covered} minutes, trace has {needed}")]
    PolicyHorizon { covered: usize, needed: usize },
    #[error("initial energy {0} kWh outside storage bounds")]
    InitialEnergy(f64),
    #[error(transparent)]
    Solver(#[from] MdpError),
}

/// What a policy sees at the start of minute `t`.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext {
    pub t: usize,
    pub timestamp: NaiveDateTime,
    pub minute: MinuteOfDay,
    /// Stored energy, kWh.
    pub energy: f64,
    /// Desired driving state.
    pub state: u8,
    /// Current price, €/MWh.
    pub price: f64,
}

impl DecisionContext {
    /// Not driving, either by choice or because the battery is empty.
    pub fn is_parked(&self, cfg: &MdpConfig) -> bool {
        actual_state(self.energy, self.state, cfg) == PARKED
    }
}

pub trait Policy {
    fn name(&self) -> String;

    /// Penalty the policy was optimized for, if any.
    fn phi(&self) -> Option<f64> {
        None
    }

    /// Minutes the policy can decide, if limited.
    fn horizon(&self) -> Option<usize> {
        None
    }

    /// Desired charge rate in `[u_min, u_max]`, kW.
    fn decide(&mut self, ctx: &DecisionContext) -> Result<f64, SimError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub policy: String,
    pub phi: Option<f64>,
    pub days: f64,
    /// Purchases minus sales, €.
    pub total_cost: f64,
    pub daily_cost_mean: f64,
    pub stranded_events: usize,
    pub stranded_minutes: usize,
    /// Energy at the start of each minute plus the final level, kWh.
    pub soc_trace: Vec<f64>,
    /// Actual charge per minute, kW.
    pub action_trace: Vec<f64>,
    pub price_trace: Vec<f64>,
    pub desired_trace: Vec<u8>,
    /// Grid-side energy bought, kWh.
    pub energy_purchased: f64,
    /// Grid-side energy sold, kWh.
    pub energy_sold: f64,
    /// Energy spent driving, kWh.
    pub energy_driven: f64,
}

impl SimulationReport {
    pub fn initial_energy(&self) -> f64 {
        self.soc_trace[0]
    }

    pub fn final_energy(&self) -> f64 {
        *self.soc_trace.last().expect("non-empty trace")
    }

    pub fn write_trace_csv<W: Write>(&self, out: &mut W, start: MinuteOfDay) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for t in 0..self.action_trace.len() {
            writeln!(
                out,
                "{t},{},{},{},{},{}",
                start.advance(t).get(),
                self.soc_trace[t],
                self.action_trace[t],
                self.price_trace[t],
                self.desired_trace[t]
            )?;
        }
        Ok(())
    }
}

/// Number of onsets of desired-but-impossible driving.
pub fn stranded_event_count(soc: &[f64], desired: &[u8], cfg: &MdpConfig) -> usize {
    let mut events = 0;
    let mut previous = false;
    for (&e, &x) in soc.iter().zip(desired) {
        let stranded = x != PARKED && e <= cfg.e_min + ENERGY_TOLERANCE;
        if stranded && !previous {
            events += 1;
        }
        previous = stranded;
    }
    events
}

/// Forward replay of `policy` over `driving` starting with `initial_energy`.
pub fn simulate_policy(
    policy: &mut dyn Policy,
    driving: &DrivingTrace,
    prices: &PriceSeries,
    cfg: &MdpConfig,
    initial_energy: f64,
) -> Result<SimulationReport, SimError> {
    if !(cfg.e_min..=cfg.e_max).contains(&initial_energy) {
        return Err(SimError::InitialEnergy(initial_energy));
    }
    let len = driving.len();
    if let Some(covered) = policy.horizon() {
        if covered < len {
            return Err(SimError::PolicyHorizon { covered, needed: len });
        }
    }
    let minute_prices = prices.minute_window(driving.start(), len)?;
    let mut e = initial_energy;
    let mut soc = Vec::with_capacity(len + 1);
    let mut actions = Vec::with_capacity(len);
    let (mut bought, mut sold, mut driven, mut cost) = (0.0, 0.0, 0.0, 0.0);
    let mut stranded_minutes = 0;
    let start_minute = driving.minute_of_day(0);

    for (t, &x) in driving.states().iter().enumerate() {
        soc.push(e);
        let price = minute_prices[t];
        let ctx = DecisionContext {
            t,
            timestamp: driving.timestamp(t),
            minute: start_minute.advance(t),
            energy: e,
            state: x,
            price,
        };
        let u = policy.decide(&ctx)?.clamp(cfg.u_min, cfg.u_max);
        let x_a = actual_state(e, x, cfg);
        if x_a != x {
            stranded_minutes += 1;
        }
        let u_a = feasible_charge(e, actual_charge(e, x, u, cfg), cfg);
        let raw = step_energy(e, x_a, u_a, cfg);
        let next = project_energy(raw, cfg);
        let grid_kwh = cfg.omega * u_a;
        if grid_kwh > 0.0 {
            bought += grid_kwh;
        } else {
            sold -= grid_kwh;
        }
        cost += price / 1000.0 * grid_kwh;
        driven += e + if u_a >= 0.0 { cfg.eta_c } else { 1.0 / cfg.eta_d } * grid_kwh - next;
        actions.push(u_a);
        e = next;
    }
    soc.push(e);
    let desired = driving.states().to_vec();
    let days = len as f64 / MINUTES_PER_DAY as f64;
    Ok(SimulationReport {
        policy: policy.name(),
        phi: policy.phi(),
        days,
        total_cost: cost,
        daily_cost_mean: cost / days,
        stranded_events: stranded_event_count(&soc, &desired, cfg),
        stranded_minutes,
        soc_trace: soc,
        action_trace: actions,
        price_trace: minute_prices,
        desired_trace: desired,
        energy_purchased: bought,
        energy_sold: sold,
        energy_driven: driven,
    })
}

/// Replays every policy on the same trace, one report per policy.
pub fn evaluate_matrix(
    policies: &mut [Box<dyn Policy>],
    driving: &DrivingTrace,
    prices: &PriceSeries,
    cfg: &MdpConfig,
    initial_energy: f64,
) -> Result<Vec<SimulationReport>, SimError> {
    policies
        .iter_mut()
        .map(|p| simulate_policy(p.as_mut(), driving, prices, cfg, initial_energy))
        .collect()
}

pub fn write_summary_csv<W: Write>(out: &mut W, reports: &[SimulationReport]) -> io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in reports {
        let phi = r.phi.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{},{:.6},{:.6}",
            r.policy, phi, r.daily_cost_mean, r.stranded_events, r.energy_purchased, r.energy_sold
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_ingest::{parse_timestamp, DRIVING};

    struct Fixed(f64);

    impl Policy for Fixed {
        fn name(&self) -> String {
            format!("fixed{}", self.0)
        }

        fn decide(&mut self, _: &DecisionContext) -> Result<f64, SimError> {
            Ok(self.0)
        }
    }

    fn setup(states: Vec<u8>) -> (DrivingTrace, PriceSeries) {
        let start = parse_timestamp("2003-03-03T00:00").unwrap();
        let hours = states.len().div_ceil(60);
        let prices = PriceSeries::new(start, (0..hours).map(|h| 30.0 + h as f64).collect()).unwrap();
        (DrivingTrace::new(start, states).unwrap(), prices)
    }

    #[test]
    fn idle_and_empty_strands_once() {
        let (tr, pr) = setup(vec![1, 1, 2, 2, 2, 1]);
        let r = simulate_policy(&mut Fixed(0.0), &tr, &pr, &MdpConfig::default(), 0.0).unwrap();
        assert_eq!(r.stranded_events, 1);
        assert_eq!(r.stranded_minutes, 3);
        assert_eq!(r.total_cost, 0.0);
    }

    #[test]
    fn edge_counting() {
        let cfg = MdpConfig::default();
        assert_eq!(stranded_event_count(&[1.0; 5], &[2; 5], &cfg), 0);
        assert_eq!(stranded_event_count(&[0.0; 30], &[DRIVING; 30], &cfg), 1);
        let soc = [0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(stranded_event_count(&soc, &[2, 2, 1, 2, 2], &cfg), 2);
    }

    #[test]
    fn bookkeeping_and_cash() {
        let mut states = vec![1u8; 300];
        for x in &mut states[100..160] {
            *x = 2;
        }
        let (tr, pr) = setup(states);
        let cfg = MdpConfig::default().v2g();
        for u in [4.0, -4.0, 2.5] {
            let r = simulate_policy(&mut Fixed(u), &tr, &pr, &cfg, 12.0).unwrap();
            let (mut charged, mut discharged) = (0.0, 0.0);
            let mut cash = 0.0;
            for (t, &ua) in r.action_trace.iter().enumerate() {
                if ua > 0.0 {
                    charged += cfg.omega * ua;
                } else {
                    discharged -= cfg.omega * ua;
                }
                cash += r.price_trace[t] / 1000.0 * cfg.omega * ua;
            }
            let expect = r.initial_energy() + cfg.eta_c * charged - discharged / cfg.eta_d - r.energy_driven;
            assert!((r.final_energy() - expect).abs() < 1e-9);
            assert!((r.total_cost - cash).abs() < 1e-9);
            assert!((r.energy_purchased - charged).abs() < 1e-9);
            assert!((r.energy_sold - discharged).abs() < 1e-9);
            assert!(r.soc_trace.iter().all(|&e| (cfg.e_min..=cfg.e_max).contains(&e)));
        }
    }

    #[test]
    fn rejects_uncovered_span() {
        let (tr, _) = setup(vec![1; 120]);
        let short = PriceSeries::new(tr.start(), vec![30.0]).unwrap();
        assert!(matches!(
            simulate_policy(&mut Fixed(0.0), &tr, &short, &MdpConfig::default(), 5.0),
            Err(SimError::Span(_))
        ));
        let (tr, pr) = setup(vec![1; 10]);
        assert!(simulate_policy(&mut Fixed(0.0), &tr, &pr, &MdpConfig::default(), 30.0).is_err());
    }

    #[test]
    fn summary_columns() {
        let (tr, pr) = setup(vec![1; 120]);
        let mut policies: Vec<Box<dyn Policy>> = vec![Box::new(Fixed(4.0)), Box::new(Fixed(4.0))];
        let reports = evaluate_matrix(&mut policies, &tr, &pr, &MdpConfig::default(), 5.0).unwrap();
        assert_eq!(reports[0], reports[1]);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SUMMARY_HEADER);
        assert_eq!(text.lines().count(), 3);
    }
}
