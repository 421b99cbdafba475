use std::collections::HashMap;

use chrono::NaiveDateTime;

use super::{DecisionContext, Policy, SimError};
use crate::data_ingest::{MinuteOfDay, PriceSeries, PARKED};
use crate::driving_model::DrivingModel;
use crate::mdp_solver::{solve, ActionSet, EnergyGrid, MdpConfig, PolicyTable};

/// Maps an observed state to a model state. Observed "driving" is read as
/// the first driving state; it only matters when the battery is empty.
fn model_state(x: u8) -> u8 {
    if x == PARKED {
        PARKED
    } else {
        2
    }
}

/// Looks up a solved policy table at the nearest energy level.
pub struct TablePolicy {
    name: String,
    phi: Option<f64>,
    table: PolicyTable,
    grid: EnergyGrid,
}

impl TablePolicy {
    pub fn new(name: impl Into<String>, phi: Option<f64>, table: PolicyTable, grid: EnergyGrid) -> Self {
        Self {
            name: name.into(),
            phi,
            table,
            grid,
        }
    }
}

impl Policy for TablePolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn phi(&self) -> Option<f64> {
        self.phi
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.table.horizon())
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<f64, SimError> {
        let level = self.grid.nearest(ctx.energy);
        Ok(self.table.action(ctx.t, level, model_state(ctx.state)))
    }
}

/// Re-solves every `every` minutes over the configured horizon, shortened
/// where the price series ends. Solves happen lazily during the replay and
/// are kept, so replaying further traces over the same prices is cheap.
pub struct RollingPolicy {
    name: String,
    model: DrivingModel,
    cfg: MdpConfig,
    grid: EnergyGrid,
    actions: ActionSet,
    every: usize,
    start: MinuteOfDay,
    prices: Vec<f64>,
    blocks: HashMap<usize, PolicyTable>,
    solves: usize,
}

impl RollingPolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        model: DrivingModel,
        prices: &PriceSeries,
        replay_start: NaiveDateTime,
        cfg: MdpConfig,
        grid: EnergyGrid,
        actions: ActionSet,
        every: usize,
    ) -> Result<Self, SimError> {
        assert!(every > 0, "re-solve interval must be positive");
        let available = (prices.end() - replay_start).num_minutes().max(0) as usize;
        let prices = prices.minute_window(replay_start, available)?;
        Ok(Self {
            name: name.into(),
            model,
            cfg,
            grid,
            actions,
            every,
            start: MinuteOfDay::of(replay_start),
            prices,
            blocks: HashMap::new(),
            solves: 0,
        })
    }

    pub fn solves(&self) -> usize {
        self.solves
    }
}

impl Policy for RollingPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn phi(&self) -> Option<f64> {
        Some(self.cfg.phi)
    }

    fn horizon(&self) -> Option<usize> {
        Some(self.prices.len())
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<f64, SimError> {
        let block = ctx.t / self.every * self.every;
        if !self.blocks.contains_key(&block) {
            let mut cfg = self.cfg.clone();
            cfg.horizon_minutes = cfg.horizon_minutes.min(self.prices.len() - block);
            let sol = solve(
                &self.model,
                &self.prices[block..],
                self.start.advance(block),
                &cfg,
                &self.grid,
                &self.actions,
            )?;
            self.blocks.insert(block, sol.policy.prefix(self.every));
            self.solves += 1;
        }
        let table = &self.blocks[&block];
        let level = self.grid.nearest(ctx.energy);
        Ok(table.action(ctx.t - block, level, model_state(ctx.state)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::simulate_policy;
    use super::*;
    use crate::data_ingest::parse_timestamp;
    use crate::driving_model::{parked_start, DrivingModelParams, ExitCurve, ModelStructure};
    use crate::mdp_solver::{rolling_solve, ActionMode};
    use crate::synthetic::{generate_trace, synthetic_prices, PriceNoise};

    fn model() -> DrivingModel {
        DrivingModel::new(
            ModelStructure::new(2).unwrap(),
            DrivingModelParams {
                exit_prob: ExitCurve::constant(0.004),
                entry_dist: vec![1.0],
                hidden_trans: vec![vec![0.05, 0.95]],
                initial_dist: parked_start(2),
            },
        )
        .unwrap()
    }

    #[test]
    fn lazy_rolling_matches_batch_rolling() {
        let start = parse_timestamp("2003-03-03T00:00").unwrap();
        let prices = synthetic_prices(start, 24 * 4, PriceNoise::default(), 1);
        let cfg = MdpConfig {
            horizon_minutes: 1440,
            ..MdpConfig::default()
        };
        let grid = EnergyGrid::new(&cfg, 49).unwrap();
        let acts = ActionSet::from_mode(ActionMode::ChargeOnly, &cfg).unwrap();
        let span = 1440;
        let batch = rolling_solve(
            &model(),
            &prices.to_minutes(),
            MinuteOfDay::of(start),
            &cfg,
            &grid,
            &acts,
            360,
            span,
        )
        .unwrap();
        let trace = generate_trace(&model(), start.date(), 1, 4);
        let mut rolling = RollingPolicy::new("opt", model(), &prices, start, cfg.clone(), grid, acts, 360).unwrap();
        let mut table = TablePolicy::new("opt", Some(cfg.phi), batch, grid);
        let a = simulate_policy(&mut rolling, &trace, &prices, &cfg, 12.0).unwrap();
        let b = simulate_policy(&mut table, &trace, &prices, &cfg, 12.0).unwrap();
        assert_eq!(a.soc_trace, b.soc_trace);
        assert_eq!(rolling.solves(), 4);
        simulate_policy(&mut rolling, &trace, &prices, &cfg, 3.0).unwrap();
        assert_eq!(rolling.solves(), 4);
    }
}
