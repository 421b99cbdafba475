use super::{
    feasible_charge, stage_revenue, step_energy, project_energy, terminal_revenue, ActionSet, EnergyGrid, MdpConfig,
    MdpError,
};
use crate::data_ingest::{MinuteOfDay, PARKED};
use crate::driving_model::{DrivingModel, TransitionMatrix};

/// `V_t(level, state)` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl ValueTable {
    fn zeros(horizon: usize, m: usize, n: usize) -> Self {
        Self {
            horizon,
            m,
            n,
            data: vec![0.0; (horizon + 1) * m * n],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, t: usize, level: usize, state: u8) -> f64 {
        self.data[(t * self.m + level) * self.n + state as usize - 1]
    }

    fn slice(&self, t: usize) -> &[f64] {
        &self.data[t * self.m * self.n..(t + 1) * self.m * self.n]
    }
}

/// Chosen desired action per `(t, level, state)` as an index into the action set.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    horizon: usize,
    m: usize,
    n: usize,
    actions: ActionSet,
    data: Vec<u8>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn levels(&self) -> usize {
        self.m
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.actions
    }

    pub fn index(&self, t: usize, level: usize, state: u8) -> u8 {
        self.data[(t * self.m + level) * self.n + state as usize - 1]
    }

    /// Desired charge rate, kW.
    pub fn action(&self, t: usize, level: usize, state: u8) -> f64 {
        self.actions.get(self.index(t, level, state))
    }

    /// First `len` minutes.
    pub fn prefix(&self, len: usize) -> PolicyTable {
        let len = len.min(self.horizon);
        PolicyTable {
            horizon: len,
            m: self.m,
            n: self.n,
            actions: self.actions.clone(),
            data: self.data[..len * self.m * self.n].to_vec(),
        }
    }

    /// Appends `other` in time.
    pub fn extend(&mut self, other: &PolicyTable) {
        assert_eq!((self.m, self.n), (other.m, other.n), "incompatible policy tables");
        self.data.extend_from_slice(&other.data);
        self.horizon += other.horizon;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: ValueTable,
    pub policy: PolicyTable,
}

/// Interpolation target of one minute of energy dynamics.
#[derive(Debug, Clone, Copy)]
struct Move {
    lo: usize,
    w: f64,
    u_a: f64,
}

impl Move {
    fn eval(&self, c: &[f64], n: usize, x: usize) -> f64 {
        let a = c[self.lo * n + x];
        if self.w == 0.0 {
            a
        } else {
            (1.0 - self.w) * a + self.w * c[(self.lo + 1) * n + x]
        }
    }
}

/// Time-invariant energy moves on the grid.
struct Kernel {
    n: usize,
    n_actions: usize,
    /// `[level][action]` while actually parked.
    parked: Vec<Move>,
    /// `[level][driving state - 2]` while actually driving.
    driving: Vec<Move>,
}

impl Kernel {
    fn new(cfg: &MdpConfig, grid: &EnergyGrid, actions: &ActionSet, n: usize) -> Self {
        let m = grid.len();
        let mut parked = Vec::with_capacity(m * actions.len());
        let mut driving = Vec::with_capacity(m * (n - 1));
        for j in 0..m {
            let e = grid.level(j);
            for &u in actions.values() {
                let u_a = feasible_charge(e, u, cfg);
                let (lo, w) = grid.bracket(project_energy(step_energy(e, PARKED, u_a, cfg), cfg));
                parked.push(Move { lo, w, u_a });
            }
            for x in 2..=n as u8 {
                let (lo, w) = grid.bracket(project_energy(step_energy(e, x, 0.0, cfg), cfg));
                driving.push(Move { lo, w, u_a: 0.0 });
            }
        }
        Self {
            n,
            n_actions: actions.len(),
            parked,
            driving,
        }
    }

    fn parked(&self, j: usize, a: usize) -> &Move {
        &self.parked[j * self.n_actions + a]
    }

    fn driving(&self, j: usize, x: u8) -> &Move {
        &self.driving[j * (self.n - 1) + x as usize - 2]
    }
}

/// `C(j, x) = Σ_x' P(x, x') V(j, x')`.
fn expect_next(p: &TransitionMatrix, v: &[f64], m: usize, n: usize, c: &mut [f64]) {
    for j in 0..m {
        let row_v = &v[j * n..(j + 1) * n];
        for x in 0..n {
            let row_p = p.row(x as u8 + 1);
            c[j * n + x] = row_p.iter().zip(row_v).map(|(a, b)| a * b).sum();
        }
    }
}

fn check_inputs(
    model: &DrivingModel,
    prices: &[f64],
    cfg: &MdpConfig,
    grid: &EnergyGrid,
) -> Result<(), MdpError> {
    cfg.validate()?;
    cfg.check_states(model.n_states())?;
    if grid.level(0) != cfg.e_min || grid.level(grid.len() - 1) != cfg.e_max {
        return Err(MdpError::InvalidConfig("energy grid does not span [e_min, e_max]".into()));
    }
    if prices.len() < cfg.horizon_minutes {
        return Err(MdpError::PriceCoverage {
            needed: cfg.horizon_minutes,
            got: prices.len(),
        });
    }
    Ok(())
}

/// Backward induction over `cfg.horizon_minutes` minutes. `prices` holds
/// one €/MWh value per minute from `start`; `start` is the minute of day of
/// `t = 0`. Off-grid storage levels are valued by linear interpolation.
pub fn solve(
    model: &DrivingModel,
    prices: &[f64],
    start: MinuteOfDay,
    cfg: &MdpConfig,
    grid: &EnergyGrid,
    actions: &ActionSet,
) -> Result<Solution, MdpError> {
    check_inputs(model, prices, cfg, grid)?;
    let horizon = cfg.horizon_minutes;
    let prices = &prices[..horizon];
    let n = model.n_states();
    let m = grid.len();
    let kernel = Kernel::new(cfg, grid, actions, n);
    let table = model.transition_table();
    let idle = actions.idle() as usize;

    let mut values = ValueTable::zeros(horizon, m, n);
    let mut policy = vec![0u8; horizon * m * n];
    for j in 0..m {
        let v = terminal_revenue(grid.level(j), prices, cfg);
        for x in 0..n {
            values.data[(horizon * m + j) * n + x] = v;
        }
    }

    let mut c = vec![0.0; m * n];
    for t in (0..horizon).rev() {
        let s = start.advance(t);
        let (head, tail) = values.data.split_at_mut((t + 1) * m * n);
        let next = &tail[..m * n];
        let current = &mut head[t * m * n..];
        expect_next(&table[s.index()], next, m, n, &mut c);
        let price = prices[t];
        let acts = &mut policy[t * m * n..(t + 1) * m * n];

        for j in 0..m {
            let e = grid.level(j);
            for x in 1..=n as u8 {
                let xi = x as usize - 1;
                let slot = j * n + xi;
                if x != PARKED && j > 0 {
                    let mv = kernel.driving(j, x);
                    current[slot] = cfg.beta * mv.eval(&c, n, xi);
                    acts[slot] = idle as u8;
                    continue;
                }
                // parked, or stranded at e_min (charging allowed)
                let mut best = f64::NEG_INFINITY;
                let mut best_a = idle;
                for a in 0..actions.len() {
                    let mv = kernel.parked(j, a);
                    let v = stage_revenue(e, x, mv.u_a, price, cfg) + cfg.beta * mv.eval(&c, n, xi);
                    if v > best + 1e-12 * best.abs().max(1.0) || best == f64::NEG_INFINITY {
                        best = v;
                        best_a = a;
                    }
                }
                current[slot] = best;
                acts[slot] = best_a as u8;
            }
        }
    }
    debug_assert!(values.data.iter().all(|v| v.is_finite()));
    Ok(Solution {
        values,
        policy: PolicyTable {
            horizon,
            m,
            n,
            actions: actions.clone(),
            data: policy,
        },
    })
}

/// Re-solves every `every` minutes over a window of `cfg.horizon_minutes`
/// and keeps the first `every` minutes of each solution. `prices` must
/// cover `span + horizon` minutes from `start`.
#[allow(clippy::too_many_arguments)]
pub fn rolling_solve(
    model: &DrivingModel,
    prices: &[f64],
    start: MinuteOfDay,
    cfg: &MdpConfig,
    grid: &EnergyGrid,
    actions: &ActionSet,
    every: usize,
    span: usize,
) -> Result<PolicyTable, MdpError> {
    if every == 0 || span == 0 {
        return Err(MdpError::InvalidConfig("re-solve interval and span must be positive".into()));
    }
    let needed = span.div_ceil(every) * every - every + cfg.horizon_minutes;
    let needed = needed.max(span);
    if prices.len() < needed {
        return Err(MdpError::PriceCoverage {
            needed,
            got: prices.len(),
        });
    }
    let mut out: Option<PolicyTable> = None;
    let mut offset = 0;
    while offset < span {
        let sol = solve(model, &prices[offset..], start.advance(offset), cfg, grid, actions)?;
        let piece = sol.policy.prefix(every.min(span - offset));
        match out.as_mut() {
            Some(p) => p.extend(&piece),
            None => out = Some(piece),
        }
        offset += every;
    }
    Ok(out.expect("span is positive"))
}

/// Expected number of stranded minutes over the horizon under `policy`,
/// indexed `[level * N + state - 1]` for the initial state. Uses the same
/// interpolated dynamics as the solver.
pub fn expected_stranded_minutes(
    model: &DrivingModel,
    policy: &PolicyTable,
    start: MinuteOfDay,
    cfg: &MdpConfig,
    grid: &EnergyGrid,
) -> Vec<f64> {
    let n = model.n_states();
    let m = grid.len();
    let kernel = Kernel::new(cfg, grid, policy.action_set(), n);
    let table = model.transition_table();
    let mut w = vec![0.0; m * n];
    let mut c = vec![0.0; m * n];
    for t in (0..policy.horizon()).rev() {
        expect_next(&table[start.advance(t).index()], &w, m, n, &mut c);
        let mut next = vec![0.0; m * n];
        for j in 0..m {
            for x in 1..=n as u8 {
                let xi = x as usize - 1;
                next[j * n + xi] = if x != PARKED && j > 0 {
                    kernel.driving(j, x).eval(&c, n, xi)
                } else {
                    let a = policy.index(t, j, x) as usize;
                    let stranded = if x != PARKED { 1.0 } else { 0.0 };
                    stranded + kernel.parked(j, a).eval(&c, n, xi)
                };
            }
        }
        w = next;
    }
    w
}

impl Solution {
    /// `V_0` at a grid level and state.
    pub fn value(&self, level: usize, state: u8) -> f64 {
        self.values.get(0, level, state)
    }

    pub fn terminal_slice(&self) -> &[f64] {
        self.values.slice(self.values.horizon)
    }
}
