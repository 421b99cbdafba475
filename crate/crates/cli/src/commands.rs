use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use evcharge::data_ingest::{
    count_transitions, parse_prices, parse_trace, split_train_test, DrivingTrace, MinuteOfDay, PriceSeries,
    MINUTES_PER_DAY, PARKED,
};
use evcharge::driving_model::{self, select_model_order, DrivingModel, ExitCurve, FitOptions};
use evcharge::mdp_solver::{self, write_heatmap_csv, write_policy_csv, ActionSet, EnergyGrid, MdpConfig};
use evcharge::policy_sim::{
    make_rule_of_thumb, simulate_policy, write_summary_csv, Policy, RollingPolicy, RuleOfThumbSpec,
    SimulationReport, TablePolicy,
};
use evcharge::spline_glm::KnotRefiner;
use evcharge::synthetic::{generate_trace, ground_truth_model, synthetic_prices, PriceNoise};

use crate::config::{Mode, RunConfig};
use crate::CliError;

const EVALUATE_PHIS: [f64; 5] = [2.0, 5.0, 10.0, 100.0, 1000.0];

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut out).and_then(|_| out.flush()).map_err(io_err)
}

fn load_trips(cfg: &RunConfig) -> Result<DrivingTrace, CliError> {
    let path = cfg.require(&cfg.trips, "trip log (--trips)")?;
    parse_trace(&read(path)?).map_err(|source| CliError::Ingest {
        context: path.display().to_string(),
        source,
    })
}

fn load_prices(cfg: &RunConfig) -> Result<PriceSeries, CliError> {
    let path = cfg.require(&cfg.prices, "price series (--prices)")?;
    parse_prices(&read(path)?).map_err(|source| CliError::Ingest {
        context: path.display().to_string(),
        source,
    })
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.out_dir.join("model.json"))
}

fn load_model(cfg: &RunConfig) -> Result<DrivingModel, CliError> {
    Ok(DrivingModel::from_json(&read(&model_path(cfg))?)?)
}

/// Training or test part of the trip log around the split date.
fn split(cfg: &RunConfig, trace: DrivingTrace, train: bool) -> Result<DrivingTrace, CliError> {
    let Some(date) = cfg.split_date else {
        return Ok(trace);
    };
    let (head, tail) = split_train_test(&trace, date).map_err(|source| CliError::Ingest {
        context: "split date".into(),
        source,
    })?;
    Ok(if train { head } else { tail })
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let first_day = cfg
        .start
        .map(|ts| ts.date())
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date"));
    let trace = generate_trace(&ground_truth_model(), first_day, cfg.days, cfg.sub_seed(1));
    // two spare days so a 48 h horizon fits after the last minute
    let midnight = first_day.and_hms_opt(0, 0, 0).expect("midnight");
    let prices = synthetic_prices(midnight, (cfg.days + 2) * 24, PriceNoise::default(), cfg.sub_seed(2));
    let trips_path = cfg.out_dir.join("trips.csv");
    let prices_path = cfg.out_dir.join("prices.csv");
    write_file(&trips_path, |out| out.write_all(trace.to_csv().as_bytes()))?;
    write_file(&prices_path, |out| out.write_all(prices.to_csv().as_bytes()))?;
    println!(
        "{} days, {} trips -> {}; {} hourly prices -> {}",
        cfg.days,
        trace.trip_count(),
        trips_path.display(),
        prices.hourly().len(),
        prices_path.display()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let trace = split(cfg, load_trips(cfg)?, true)?;
    let counts = count_transitions(&trace, cfg.day_filter);
    let refiner = KnotRefiner {
        init_knots: cfg.init_knots,
        max_knots: cfg.max_knots,
        lr_alpha: cfg.lr_alpha,
        ..KnotRefiner::default()
    };
    let outcome = refiner.run(&counts, PARKED)?;
    println!("exit curve knots:");
    for step in &outcome.history {
        let lr = step.lr_statistic.map(|v| format!(" LR {v:.2} vs {:.2}", step.critical_value.unwrap_or(0.0)));
        println!(
            "  {:>2} knots  logL {:.3}{}  {}",
            step.knots.len(),
            step.log_likelihood,
            lr.unwrap_or_default(),
            if step.accepted { "kept" } else { "rejected" }
        );
    }
    let exit = ExitCurve::from(outcome.probability);
    let opts = FitOptions {
        seed: cfg.sub_seed(3),
        day_filter: cfg.day_filter,
        ..FitOptions::default()
    };
    let selection = select_model_order(&trace, &exit, cfg.max_states, cfg.lr_alpha, &opts)?;
    println!("model order:");
    for step in &selection.steps {
        let lr = match (step.lr_statistic, step.df, step.critical_value) {
            (Some(lr), Some(df), Some(crit)) => format!(" LR {lr:.2} (df {df}, critical {crit:.2})"),
            _ => String::new(),
        };
        println!(
            "  N = {}  logL {:.3}{}  {}",
            step.n_states,
            step.log_likelihood,
            lr,
            if step.accepted { "kept" } else { "rejected" }
        );
    }
    let model = selection.fitted.model;
    let path = model_path(cfg);
    let json = model.to_json()?;
    write_file(&path, |out| out.write_all(json.as_bytes()))?;
    println!("N = {} model -> {}", model.n_states(), path.display());
    Ok(())
}

fn action_set(mode: Mode, mcfg: &MdpConfig) -> Result<ActionSet, CliError> {
    Ok(ActionSet::from_mode(mode.into(), mcfg)?)
}

pub fn solve(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let prices = load_prices(cfg)?;
    let start = cfg.start.unwrap_or(prices.start());
    let mcfg = cfg.mode_cfg(cfg.mode, cfg.phi[0]);
    mcfg.check_states(model.n_states())?;
    let grid = EnergyGrid::new(&mcfg, cfg.grid_levels)?;
    let actions = action_set(cfg.mode, &mcfg)?;
    let window = prices
        .minute_window(start, mcfg.horizon_minutes)
        .map_err(|source| CliError::Ingest {
            context: "prices".into(),
            source,
        })?;
    let clock = Instant::now();
    let solution = mdp_solver::solve(&model, &window, MinuteOfDay::of(start), &mcfg, &grid, &actions)?;
    let secs = clock.elapsed().as_secs_f64();
    let policy_path = cfg.out_dir.join("policy.csv");
    let heatmap_path = cfg.out_dir.join("heatmap.csv");
    write_file(&policy_path, |out| write_policy_csv(out, &solution))?;
    write_file(&heatmap_path, |out| {
        write_heatmap_csv(out, &solution.policy, &grid, mcfg.kappa, MinuteOfDay::of(start))
    })?;
    println!(
        "{} minutes x {} levels x {} states solved in {secs:.2} s; value parked and full {:.4} EUR",
        mcfg.horizon_minutes,
        grid.len(),
        model.n_states(),
        solution.value(grid.len() - 1, PARKED)
    );
    println!("policy -> {}, heat map -> {}", policy_path.display(), heatmap_path.display());
    Ok(())
}

enum Entry {
    Optimal { mode: Mode, phi: f64 },
    Rule(RuleOfThumbSpec),
}

fn rule(name: &str) -> RuleOfThumbSpec {
    match name {
        "naive" => RuleOfThumbSpec::naive(),
        "night" => RuleOfThumbSpec::night(),
        "low_price" => RuleOfThumbSpec::low_price(),
        "v2g_bounded" => RuleOfThumbSpec::v2g_bounded(),
        "v2g_unbounded" => RuleOfThumbSpec::v2g_unbounded(),
        other => unreachable!("policy names are validated, got {other}"),
    }
}

fn entries(cfg: &RunConfig, evaluate: bool) -> Vec<Entry> {
    if evaluate {
        let phis = if cfg.phi_explicit { cfg.phi.clone() } else { EVALUATE_PHIS.to_vec() };
        let mut out: Vec<Entry> = [Mode::Charge, Mode::V2g]
            .into_iter()
            .flat_map(|mode| phis.iter().map(move |&phi| Entry::Optimal { mode, phi }))
            .collect();
        out.extend(
            ["naive", "night", "low_price", "v2g_bounded", "v2g_unbounded"]
                .into_iter()
                .map(|n| Entry::Rule(rule(n))),
        );
        return out;
    }
    cfg.policies
        .iter()
        .flat_map(|name| {
            if name == "optimal" {
                cfg.phi
                    .iter()
                    .map(|&phi| Entry::Optimal { mode: cfg.mode, phi })
                    .collect::<Vec<_>>()
            } else {
                vec![Entry::Rule(rule(name))]
            }
        })
        .collect()
}

/// Builds the policy, the vehicle it is replayed with and a file label.
fn build(
    entry: &Entry,
    cfg: &RunConfig,
    model: &DrivingModel,
    prices: &PriceSeries,
    replay: &DrivingTrace,
) -> Result<(Box<dyn Policy>, MdpConfig, String), CliError> {
    match entry {
        Entry::Optimal { mode, phi } => {
            let mcfg = cfg.mode_cfg(*mode, *phi);
            mcfg.check_states(model.n_states())?;
            let grid = EnergyGrid::new(&mcfg, cfg.grid_levels)?;
            let actions = action_set(*mode, &mcfg)?;
            let name = match mode {
                Mode::Charge => "optimal",
                Mode::V2g => "optimal_v2g",
            };
            let policy: Box<dyn Policy> = if cfg.fixed_horizon {
                let window = prices
                    .minute_window(replay.start(), mcfg.horizon_minutes)
                    .map_err(|source| CliError::Ingest {
                        context: "prices".into(),
                        source,
                    })?;
                let sol = mdp_solver::solve(model, &window, MinuteOfDay::of(replay.start()), &mcfg, &grid, &actions)?;
                Box::new(TablePolicy::new(name, Some(*phi), sol.policy, grid))
            } else {
                Box::new(RollingPolicy::new(
                    name,
                    model.clone(),
                    prices,
                    replay.start(),
                    mcfg.clone(),
                    grid,
                    actions,
                    cfg.roll_every_minutes,
                )?)
            };
            Ok((policy, mcfg, format!("{name}_phi{phi}")))
        }
        Entry::Rule(spec) => {
            let mcfg = match spec.kind {
                evcharge::policy_sim::RuleKind::V2gQuantile => cfg.v2g_cfg(cfg.phi[0]),
                _ => cfg.charge_cfg(cfg.phi[0]),
            };
            Ok((make_rule_of_thumb(spec.clone(), prices, &mcfg), mcfg, spec.label()))
        }
    }
}

/// Pools replays of several traces into one report; traces are kept from
/// the first replay.
fn pool(reports: Vec<SimulationReport>) -> SimulationReport {
    let mut it = reports.into_iter();
    let mut acc = it.next().expect("at least one trace");
    for r in it {
        acc.days += r.days;
        acc.total_cost += r.total_cost;
        acc.stranded_events += r.stranded_events;
        acc.stranded_minutes += r.stranded_minutes;
        acc.energy_purchased += r.energy_purchased;
        acc.energy_sold += r.energy_sold;
        acc.energy_driven += r.energy_driven;
    }
    acc.daily_cost_mean = acc.total_cost / acc.days;
    acc
}

pub fn simulate(cfg: &RunConfig, evaluate: bool) -> Result<(), CliError> {
    let model = load_model(cfg)?;
    let prices = load_prices(cfg)?;
    let traces: Vec<DrivingTrace> = if cfg.scenarios > 0 {
        let start = cfg.start.unwrap_or(prices.start());
        let base = cfg.sub_seed(4);
        (0..cfg.scenarios as u64)
            .map(|i| {
                driving_model::simulate(&model, PARKED, start, cfg.days * MINUTES_PER_DAY, base.wrapping_add(i)).observed
            })
            .collect()
    } else {
        vec![split(cfg, load_trips(cfg)?, false)?]
    };
    let initial = cfg.initial_energy();
    let trace_dir = cfg.out_dir.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|source| CliError::Io {
        path: trace_dir.clone(),
        source,
    })?;

    let mut summary = Vec::new();
    for entry in entries(cfg, evaluate) {
        let (mut policy, mcfg, label) = build(&entry, cfg, &model, &prices, &traces[0])?;
        let reports = traces
            .iter()
            .map(|tr| simulate_policy(policy.as_mut(), tr, &prices, &mcfg, initial))
            .collect::<Result<Vec<_>, _>>()?;
        let report = pool(reports);
        let path = trace_dir.join(format!("{label}.csv"));
        write_file(&path, |out| report.write_trace_csv(out, traces[0].minute_of_day(0)))?;
        println!(
            "{:<14} phi {:>6}  {:>8.4} EUR/day  {:>3} stranded events",
            report.policy,
            report.phi.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            report.daily_cost_mean,
            report.stranded_events
        );
        summary.push(report);
    }
    let path = cfg.out_dir.join("summary.csv");
    write_file(&path, |out| write_summary_csv(out, &summary))?;
    println!("summary -> {}", path.display());
    Ok(())
}
