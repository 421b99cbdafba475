mod common;

use chrono::NaiveDate;
use evcharge::data_ingest::{count_transitions, parse_timestamp, parse_trace, DayFilter, DrivingTrace, MinuteOfDay};
use evcharge::driving_model::hmm_log_likelihood;
use evcharge::mdp_solver::{
    solve, transition, ActionMode, ActionSet, EnergyGrid, MdpConfig,
};
use evcharge::policy_sim::{simulate_policy, DecisionContext, Policy, SimError};
use evcharge::spline_glm::SplineBasis;
use evcharge::synthetic::{generate_trace, ground_truth_model, synthetic_prices, PriceNoise};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trace_strategy(max_len: usize) -> impl Strategy<Value = DrivingTrace> {
    (0i64..10_000, prop::collection::vec(1u8..=2, 1..max_len)).prop_map(|(offset, states)| {
        let start = parse_timestamp("2003-01-01T00:00").unwrap() + chrono::Duration::minutes(offset);
        DrivingTrace::new(start, states).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(trace in trace_strategy(3000)) {
        prop_assert_eq!(parse_trace(&trace.to_csv()).unwrap(), trace);
    }

    #[test]
    fn counts_total_and_additivity(trace in trace_strategy(3000), cut in 1usize..3000) {
        let counts = count_transitions(&trace, DayFilter::All);
        prop_assert_eq!(counts.total() as usize, trace.len() - 1);
        let cut = cut.min(trace.len() - 1).max(1);
        if trace.len() >= 2 {
            let states = trace.states();
            let head = DrivingTrace::new(trace.start(), states[..cut].to_vec()).unwrap();
            let tail = DrivingTrace::new(trace.timestamp(cut), states[cut..].to_vec()).unwrap();
            let mut merged = count_transitions(&head, DayFilter::All);
            merged.merge(&count_transitions(&tail, DayFilter::All));
            merged.record(states[cut - 1], states[cut], trace.minute_of_day(cut - 1));
            prop_assert_eq!(merged, counts);
        }
    }

    #[test]
    fn partition_of_unity(mut inner in prop::collection::vec(1.0f64..1439.0, 0..15), periodic: bool, degree in 1usize..4) {
        inner.sort_by(f64::total_cmp);
        inner.dedup_by(|a, b| (*a - *b).abs() < 1.0);
        let mut knots = vec![0.0];
        knots.extend(inner);
        knots.push(1440.0);
        let basis = if periodic {
            SplineBasis::periodic(&knots, degree)
        } else {
            SplineBasis::clamped(&knots, degree)
        };
        if let Ok(basis) = basis {
            for s in 1..=1440u16 {
                let x = SplineBasis::minute_position(s as usize);
                let sum: f64 = basis.eval(x).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_stochastic_and_periodic(seed: u64, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, n);
        for s in 1..=1440u16 {
            let s = MinuteOfDay::new(s).unwrap();
            let m = model.transition_matrix_at(s);
            for k in 1..=n as u8 {
                let sum: f64 = m.row(k).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
            prop_assert_eq!(&m, &model.transition_matrix_at(MinuteOfDay::wrap(s.get() as i64 + 1440)));
        }
    }

    #[test]
    fn forward_equals_path_sum(seed: u64, n in 2usize..5, len in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, n);
        let trace = common::random_trace(&mut rng, len);
        let brute = common::brute_force_likelihood(&model, &trace);
        let ll = hmm_log_likelihood(&model, &trace).unwrap();
        if brute == 0.0 {
            prop_assert_eq!(ll, f64::NEG_INFINITY);
        } else {
            prop_assert!(common::close(ll.exp(), brute, 1e-10), "{} vs {}", ll.exp(), brute);
        }
    }
}

fn small_cfg(horizon: usize, v2g: bool) -> MdpConfig {
    let cfg = MdpConfig {
        e_max: 3.0,
        kappa: 3.0,
        horizon_minutes: horizon,
        ..MdpConfig::default()
    };
    if v2g {
        cfg.v2g()
    } else {
        cfg
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn value_monotone_in_energy(seed: u64, v2g: bool, phi in 0.0f64..200.0, levels in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 3);
        let mut cfg = small_cfg(300, v2g);
        cfg.phi = phi;
        let grid = EnergyGrid::new(&cfg, levels).unwrap();
        let mode = if v2g { ActionMode::V2g } else { ActionMode::ChargeOnly };
        let acts = ActionSet::from_mode(mode, &cfg).unwrap();
        let prices: Vec<f64> = (0..300).map(|t| 30.0 + 25.0 * ((t as f64 + seed as f64) / 40.0).sin()).collect();
        let start = MinuteOfDay::new(1 + (seed % 1440) as u16).unwrap();
        let sol = solve(&model, &prices, start, &cfg, &grid, &acts).unwrap();
        for t in 0..=300 {
            for x in 1..=3u8 {
                for j in 1..levels {
                    prop_assert!(sol.values.get(t, j, x) >= sol.values.get(t, j - 1, x) - 1e-12);
                }
            }
        }
        // feasibility of every stored action
        for t in 0..300 {
            for j in 0..levels {
                for x in 1..=3u8 {
                    let u = sol.policy.action(t, j, x);
                    prop_assert!(u >= cfg.u_min && u <= cfg.u_max);
                    prop_assert!(acts.values().contains(&u));
                    let (_, _, next) = transition(grid.level(j), x, u, &cfg);
                    prop_assert!(next >= cfg.e_min && next <= cfg.e_max);
                }
            }
        }
    }
}

struct RandomPolicy {
    rng: ChaCha8Rng,
    choices: Vec<f64>,
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _: &DecisionContext) -> Result<f64, SimError> {
        use rand::seq::IndexedRandom;
        Ok(*self.choices.choose(&mut self.rng).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_bookkeeping(seed: u64, initial in 0.0f64..=24.0) {
        let day = NaiveDate::from_ymd_opt(2003, 2, 3).unwrap();
        let trace = generate_trace(&ground_truth_model(), day, 3, seed);
        let prices = synthetic_prices(day.and_hms_opt(0, 0, 0).unwrap(), 72, PriceNoise::default(), seed);
        let cfg = MdpConfig::default().v2g();
        let make = || RandomPolicy { rng: ChaCha8Rng::seed_from_u64(seed), choices: vec![-4.0, 0.0, 1.5, 4.0] };
        let r = simulate_policy(&mut make(), &trace, &prices, &cfg, initial).unwrap();
        let (mut charged, mut discharged, mut cash) = (0.0, 0.0, 0.0);
        for (t, &u) in r.action_trace.iter().enumerate() {
            let kwh = cfg.omega * u;
            if u > 0.0 { charged += kwh } else { discharged -= kwh }
            cash += r.price_trace[t] / 1000.0 * kwh;
        }
        let expect = initial + cfg.eta_c * charged - discharged / cfg.eta_d - r.energy_driven;
        prop_assert!((r.final_energy() - expect).abs() < 1e-9);
        prop_assert!((r.total_cost - cash).abs() < 1e-9);
        prop_assert!(r.soc_trace.iter().all(|e| (cfg.e_min..=cfg.e_max).contains(e)));
        // driving energy is the nominal consumption except where the battery ran dry
        let per_minute = cfg.drive_energy(2);
        let driving_minutes = r.desired_trace.iter().enumerate().filter(|(t, &x)| x == 2 && r.soc_trace[*t] > cfg.e_min + 1e-9).count();
        prop_assert!(r.energy_driven <= driving_minutes as f64 * per_minute + 1e-9);
        let again = simulate_policy(&mut make(), &trace, &prices, &cfg, initial).unwrap();
        prop_assert_eq!(r, again);
    }
}
