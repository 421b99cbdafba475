use std::io::{self, Write};

use super::{action_code, EnergyGrid, PolicyTable, Solution};
use crate::data_ingest::{MinuteOfDay, PARKED};

pub const POLICY_HEADER: &str = "t,energy_idx,driving_state,action,value";
pub const HEATMAP_HEADER: &str = "t,minute_of_day,soc_pct,action";

/// One row per `(t, level, state)`: action code (1 charge, 0 idle,
/// -1 discharge) and `V_t`.
pub fn write_policy_csv<W: Write>(out: &mut W, solution: &Solution) -> io::Result<()> {
    let policy = &solution.policy;
    writeln!(out, "{POLICY_HEADER}")?;
    for t in 0..policy.horizon() {
        for j in 0..policy.levels() {
            for x in 1..=policy.n_states() as u8 {
                writeln!(
                    out,
                    "{t},{j},{x},{},{}",
                    action_code(policy.action(t, j, x)),
                    solution.values.get(t, j, x)
                )?;
            }
        }
    }
    Ok(())
}

/// Parked-state action codes over time and state of charge.
pub fn write_heatmap_csv<W: Write>(
    out: &mut W,
    policy: &PolicyTable,
    grid: &EnergyGrid,
    kappa: f64,
    start: MinuteOfDay,
) -> io::Result<()> {
    writeln!(out, "{HEATMAP_HEADER}")?;
    for t in 0..policy.horizon() {
        let s = start.advance(t).get();
        for j in 0..policy.levels() {
            let soc = 100.0 * grid.level(j) / kappa;
            writeln!(out, "{t},{s},{soc:.3},{}", action_code(policy.action(t, j, PARKED)))?;
        }
    }
    Ok(())
}
