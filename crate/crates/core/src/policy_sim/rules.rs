use serde::{Deserialize, Serialize};

use super::{DecisionContext, Policy, SimError};
use crate::data_ingest::PriceSeries;
use crate::mdp_solver::MdpConfig;
use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Charge whenever parked.
    Naive,
    /// Charge inside the night window or below the SOC floor.
    Night,
    /// Charge at cheap hours of the coming day or below the SOC floor.
    LowPrice,
    /// Charge at cheap hours, discharge at expensive ones down to a floor.
    V2gQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleOfThumbSpec {
    pub kind: RuleKind,
    /// Night window `[start, end)` in hours; may wrap midnight.
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    /// Charge below this share of capacity regardless of price or time.
    pub soc_floor: f64,
    pub buy_quantile: f64,
    pub sell_quantile: f64,
    /// Lowest share of capacity that may be sold back.
    pub v2g_floor: f64,
}

impl RuleOfThumbSpec {
    fn base(kind: RuleKind) -> Self {
        Self {
            kind,
            night_start_hour: 22,
            night_end_hour: 6,
            soc_floor: 0.5,
            buy_quantile: 0.2,
            sell_quantile: 0.9,
            v2g_floor: 0.0,
        }
    }

    pub fn naive() -> Self {
        Self::base(RuleKind::Naive)
    }

    pub fn night() -> Self {
        Self::base(RuleKind::Night)
    }

    pub fn low_price() -> Self {
        Self::base(RuleKind::LowPrice)
    }

    pub fn v2g_unbounded() -> Self {
        Self {
            buy_quantile: 0.3,
            ..Self::base(RuleKind::V2gQuantile)
        }
    }

    pub fn v2g_bounded() -> Self {
        Self {
            v2g_floor: 0.25,
            ..Self::v2g_unbounded()
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            RuleKind::Naive => "naive".into(),
            RuleKind::Night => "night".into(),
            RuleKind::LowPrice => "low_price".into(),
            RuleKind::V2gQuantile if self.v2g_floor > 0.0 => "v2g_bounded".into(),
            RuleKind::V2gQuantile => "v2g_unbounded".into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.buy_quantile) && unit(self.sell_quantile)) {
            return Err("quantiles must lie in [0,1]".into());
        }
        if !(unit(self.soc_floor) && unit(self.v2g_floor)) {
            return Err("floors are shares of capacity in [0,1]".into());
        }
        if self.night_start_hour > 23 || self.night_end_hour > 23 {
            return Err("night window hours must lie in 0..=23".into());
        }
        Ok(())
    }
}

struct RuleOfThumb {
    spec: RuleOfThumbSpec,
    cfg: MdpConfig,
    prices_start: chrono::NaiveDateTime,
    /// `(buy, sell)` thresholds for each hour of the price series.
    thresholds: Vec<(f64, f64)>,
}

fn in_window(hour: u32, start: u32, end: u32) -> bool {
    if start <= end {
        (start..end).contains(&hour)
    } else {
        hour >= start || hour < end
    }
}

impl Policy for RuleOfThumb {
    fn name(&self) -> String {
        self.spec.label()
    }

    fn decide(&mut self, ctx: &DecisionContext) -> Result<f64, SimError> {
        let cfg = &self.cfg;
        if !ctx.is_parked(cfg) {
            return Ok(0.0);
        }
        let soc = ctx.energy / cfg.kappa;
        let can_charge = ctx.energy < cfg.e_max;
        let hour_index = ((ctx.timestamp - self.prices_start).num_minutes() / 60).max(0) as usize;
        let (buy, sell) = self.thresholds[hour_index.min(self.thresholds.len() - 1)];
        let charge = match self.spec.kind {
            RuleKind::Naive => true,
            RuleKind::Night => {
                in_window(ctx.minute.hour(), self.spec.night_start_hour, self.spec.night_end_hour)
                    || soc < self.spec.soc_floor
            }
            RuleKind::LowPrice => ctx.price <= buy || soc < self.spec.soc_floor,
            RuleKind::V2gQuantile => {
                if ctx.price <= buy {
                    true
                } else if ctx.price >= sell {
                    let floor = (self.spec.v2g_floor * cfg.kappa).max(cfg.e_min);
                    let stock = ctx.energy - floor;
                    return Ok(if stock > 0.0 {
                        cfg.u_min.max(-stock * cfg.eta_d / cfg.omega)
                    } else {
                        0.0
                    });
                } else {
                    false
                }
            }
        };
        Ok(if charge && can_charge { cfg.u_max } else { 0.0 })
    }
}

/// Builds a baseline policy. Price thresholds use the quantiles of the
/// hourly prices from the current hour over the next 24 hours.
pub fn make_rule_of_thumb(spec: RuleOfThumbSpec, prices: &PriceSeries, cfg: &MdpConfig) -> Box<dyn Policy> {
    let hourly = prices.hourly();
    let thresholds = (0..hourly.len())
        .map(|h| {
            let window = &hourly[h..(h + 24).min(hourly.len())];
            (quantile(window, spec.buy_quantile), quantile(window, spec.sell_quantile))
        })
        .collect();
    Box::new(RuleOfThumb {
        spec,
        cfg: cfg.clone(),
        prices_start: prices.start(),
        thresholds,
    })
}
