//! Online intervention loop against the solver oracle: convergence on the
//! reference markets, agreement with the offline constrained solve, decay
//! of time-averaged violations, and bitwise determinism.

use fairmarket::cases;
use fairmarket::constraints::interventions_from_multipliers;
use fairmarket::generate::{
    family_constraints, generate_market, ExperimentConfig, Family,
};
use fairmarket::market::Market;
use fairmarket::mat::Mat;
use fairmarket::opic::{
    run_opic, run_opic_until, time_averaged_violation, RateSchedule, SolverOracle,
};
use fairmarket::solver::{solve_constrained_eg, solve_offset_eg, SolverConfig};
use fairmarket::LinearConstraintSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn parity_reference_market_converges_with_harmonic_rate() {
    let market = cases::market_t1();
    let cs = cases::constraint_t1(&market);
    let config = SolverConfig::default();
    let mut oracle = SolverOracle::new(&market, config);
    let trace = run_opic(&mut oracle, &cs, RateSchedule::Harmonic(0.5), 200).unwrap();
    let last = trace.rounds.last().unwrap();
    assert!(
        last.residual.max_violation <= 0.05,
        "final violation {}",
        last.residual.max_violation
    );
}

#[test]
fn empty_constraints_mean_no_interventions() {
    let market = cases::market_t5();
    let cs = LinearConstraintSet::empty(2, 2);
    let config = SolverConfig::default();
    let mut oracle = SolverOracle::new(&market, config);
    let trace = run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 5).unwrap();
    for round in &trace.rounds {
        assert!(round.interventions.iter().all(|v| v == 0.0));
        assert_eq!(round.residual.max_violation, 0.0);
    }
    // Every round is just the unconstrained equilibrium.
    let base = solve_offset_eg(&market, &Mat::zeros(2, 2), &config).unwrap();
    let u_base = base.utilities(&market);
    for round in &trace.rounds {
        let u = round.allocation.utilities(&market);
        for (a, b) in u.iter().zip(&u_base) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn random_market_time_average_converges_fast() {
    let solver = SolverConfig::default();
    let config = ExperimentConfig::new(Family::Pip);
    let sample = generate_market(&config, 7, &solver).unwrap();
    let cs = family_constraints(&config, &sample.market);
    let mut oracle = SolverOracle::new(&sample.market, solver);
    let trace = run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 50).unwrap();
    let averaged = time_averaged_violation(&trace, &cs, 50).unwrap();
    assert!(
        averaged.max_violation < 0.05,
        "averaged violation {}",
        averaged.max_violation
    );
}

#[test]
fn online_matches_offline_on_reference_markets() {
    // Run until the multiplier movement dies down, then compare the
    // equilibrium induced by the learned interventions with the offline
    // constrained solve. Multipliers themselves may differ (dual optima
    // are not unique); utilities are the comparable quantity.
    let config = SolverConfig::default();
    let markets: Vec<(Market, LinearConstraintSet)> = vec![
        {
            let m = cases::market_t1();
            let c = cases::constraint_t1(&m);
            (m, c)
        },
        {
            let m = cases::market_t2();
            let c = cases::constraint_t2_pip(&m);
            (m, c)
        },
        {
            let m = cases::market_t2();
            let c = cases::constraint_t2_aef(&m);
            (m, c)
        },
        {
            let m = cases::market_t4();
            let c = cases::constraint_t4(&m);
            (m, c)
        },
        {
            let m = cases::market_t5();
            let c = cases::constraint_t5(&m);
            (m, c)
        },
        {
            let m = cases::market_t6();
            let c = cases::constraint_t6(&m);
            (m, c)
        },
    ];
    for (k, (market, cs)) in markets.iter().enumerate() {
        let offline = solve_constrained_eg(market, cs, &config).unwrap();
        let mut oracle = SolverOracle::new(market, config);
        let (trace, _) =
            run_opic_until(&mut oracle, cs, RateSchedule::Harmonic(4.0), 1e-5, 3000)
                .unwrap();
        let last = trace.rounds.last().unwrap();
        let interventions =
            interventions_from_multipliers(cs, &last.multipliers).unwrap();
        let induced = solve_offset_eg(market, &interventions, &config).unwrap();
        let u_online = induced.utilities(market);
        let u_offline = offline.utilities(market);
        for (i, (a, b)) in u_online.iter().zip(&u_offline).enumerate() {
            assert!(
                (a - b).abs() <= 1e-2,
                "market {k}, buyer {i}: online {a} vs offline {b} after {} rounds",
                trace.rounds.len()
            );
        }
    }
}

#[test]
fn averaged_violation_decays_for_most_seeds() {
    // Harmonic schedule on small random parity markets: the time-averaged
    // violation at round 200 is no worse than at round 20 for at least 95%
    // of seeds.
    let config = SolverConfig::default();
    let mut better = 0;
    let total = 50;
    for seed in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(0.05..1.0)).collect())
            .collect();
        let market = Market::new(vec![1.0; 4], Mat::from_rows(&rows)).unwrap();
        let cs = fairmarket::build_pbp(
            &market,
            &[0, 1].into(),
            &[0, 1].into(),
            &[2, 3].into(),
            1.0,
        )
        .unwrap();
        let mut oracle = SolverOracle::new(&market, config);
        let trace = run_opic(&mut oracle, &cs, RateSchedule::Harmonic(0.5), 200).unwrap();
        let at_20 = time_averaged_violation(&trace, &cs, 20)
            .unwrap()
            .max_violation;
        let at_200 = time_averaged_violation(&trace, &cs, 200)
            .unwrap()
            .max_violation;
        if at_200 <= at_20 + 1e-12 {
            better += 1;
        }
    }
    assert!(
        better * 100 >= total * 95,
        "only {better}/{total} seeds improved"
    );
}

#[test]
fn traces_are_bitwise_deterministic() {
    let solver = SolverConfig::default();
    let config = ExperimentConfig::new(Family::Aef);
    let sample = generate_market(&config, 2, &solver).unwrap();
    let cs = family_constraints(&config, &sample.market);
    let run = || {
        let mut oracle = SolverOracle::new(&sample.market, solver);
        let trace = run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 25).unwrap();
        let mut csv = Vec::new();
        trace.write_csv(&cs, &mut csv).unwrap();
        csv
    };
    assert_eq!(run(), run());
}
