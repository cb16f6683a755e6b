//! Acceptance suite. Every criterion runs at its stated tolerance and
//! prints one line; run with `cargo test --test acceptance -- --nocapture`
//! to see them. Thresholds are pinned here, not configurable.

use std::collections::BTreeSet;
use std::time::Instant;

use fairmarket::audit::{
    budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, percentile,
};
use fairmarket::cases;
use fairmarket::eg_objective;
use fairmarket::generate::{
    family_constraints, generate_market, group_split, random_market, ExperimentConfig,
    Family,
};
use fairmarket::opic::{run_opic, time_averaged_violation, RateSchedule, SolverOracle};
use fairmarket::solver::{
    brute_force_eg, solve_constrained_eg, solve_offset_eg, verify_equilibrium,
    SolverConfig,
};
use fairmarket::{LinearConstraintSet, Market, Mat};

fn conclude(name: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_1_parity_exit_reproduction() {
    let start = Instant::now();
    let market = cases::market_t1();
    let config = SolverConfig::default();
    let base = solve_offset_eg(&market, &Mat::zeros(4, 2), &config).unwrap();
    let price_err = max_abs_diff(&base.prices.base, &[1.5, 1.5]);
    let u_err = max_abs_diff(
        &base.utilities(&market),
        &[1.0, 1.0, 10.0 / 3.0, 10.0 / 3.0],
    );

    let cs = cases::constraint_t1(&market);
    let con = solve_constrained_eg(&market, &cs, &config).unwrap();
    let u = con.utilities(&market);
    let cu_err = max_abs_diff(&u[..2], &[1.0, 1.0]).max(max_abs_diff(&u[2..], &[5.0, 5.0]));
    let purchases: f64 = con.alloc.x.row(0).iter().chain(con.alloc.x.row(1)).sum();
    let cp_err = max_abs_diff(&con.prices.base, &[1.0, 1.0]);
    let elapsed = start.elapsed();

    let pass = price_err <= 1e-3
        && u_err <= 1e-3
        && cu_err <= 1e-3
        && purchases <= 1e-3
        && cp_err <= 1e-2
        && elapsed.as_secs_f64() < 1.0;
    conclude(
        "1 parity-exit reproduction",
        pass,
        &format!(
            "price err {price_err:.1e}, u err {u_err:.1e}, constrained u err {cu_err:.1e}, \
             exits hold {purchases:.1e}, constrained price err {cp_err:.1e}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_2_crowding_reproduction() {
    let market = cases::market_t2();
    let config = SolverConfig::default();
    let base = solve_offset_eg(&market, &Mat::zeros(4, 2), &config).unwrap();
    let base_err = max_abs_diff(&base.utilities(&market), &[1.0, 1.125, 1.5, 1.5]);

    let pip = solve_constrained_eg(&market, &cases::constraint_t2_pip(&market), &config)
        .unwrap();
    let pip_err = max_abs_diff(
        &pip.utilities(&market),
        &[1.0, 1.0, 4.0 / 3.0, 4.0 / 3.0],
    );
    let aef = solve_constrained_eg(&market, &cases::constraint_t2_aef(&market), &config)
        .unwrap();
    let equiv_err = max_abs_diff(&aef.utilities(&market), &pip.utilities(&market));

    let pass = base_err <= 2e-2 && pip_err <= 2e-2 && equiv_err <= 2e-2;
    conclude(
        "2 crowding reproduction",
        pass,
        &format!("base err {base_err:.1e}, parity err {pip_err:.1e}, floor equivalence {equiv_err:.1e}"),
    );
}

#[test]
fn criterion_3_small_reference_markets() {
    let config = SolverConfig::default();
    let m4 = cases::market_t4();
    let eq4 = solve_constrained_eg(&m4, &cases::constraint_t4(&m4), &config).unwrap();
    let t4_err = max_abs_diff(&eq4.utilities(&m4), &[1.52, 2.28]);

    let m5 = cases::market_t5();
    let eq5 = solve_constrained_eg(&m5, &cases::constraint_t5(&m5), &config).unwrap();
    let t5_price_err = max_abs_diff(&eq5.prices.base, &[2.0 / 3.0, 4.0 / 3.0]);
    let t5_u_err = max_abs_diff(&eq5.utilities(&m5), &[1.5, 1.5]);

    let m3 = cases::market_t3();
    let eq3 = solve_constrained_eg(&m3, &cases::constraint_t3(&m3), &config).unwrap();
    let t3_gap = buyer_item_pareto_gap(&m3, &eq3.alloc.x, &[0], &[1])
        .unwrap()
        .gap;

    let m6 = cases::market_t6();
    let eq6 = solve_constrained_eg(&m6, &cases::constraint_t6(&m6), &config).unwrap();
    let t6_gap = buyer_pareto_gap(&m6, &eq6.alloc.x).unwrap().gap;

    let pass =
        t4_err <= 2e-2 && t5_price_err <= 2e-2 && t5_u_err <= 2e-2 && t3_gap > 0.1 && t6_gap > 0.1;
    conclude(
        "3 small reference markets",
        pass,
        &format!(
            "t4 err {t4_err:.1e}, t5 price err {t5_price_err:.1e}, t5 u err {t5_u_err:.1e}, \
             t3 buyer-item gap {t3_gap:.2}, t6 buyer gap {t6_gap:.2}"
        ),
    );
}

#[test]
fn criterion_4_grid_oracle_equivalence() {
    let config = SolverConfig::default();
    let grid = 0.01;
    let instances: Vec<(Market, LinearConstraintSet)> = vec![
        {
            let m = cases::market_t3();
            let c = cases::constraint_t3(&m);
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
    let mut worst_obj = 0.0_f64;
    let mut worst_u = 0.0_f64;
    for (market, cs) in &instances {
        let eq = solve_constrained_eg(market, cs, &config).unwrap();
        let (grid_alloc, grid_obj) = brute_force_eg(market, cs, grid).unwrap();
        let solver_obj = eg_objective(market, &eq.alloc).unwrap();
        worst_obj = worst_obj.max((solver_obj - grid_obj).abs());
        worst_u = worst_u.max(max_abs_diff(
            &eq.utilities(market),
            &grid_alloc.utilities(market),
        ));
    }
    let pass = worst_obj <= 5e-2 && worst_u <= 5e-2;
    conclude(
        "4 grid-oracle equivalence",
        pass,
        &format!("worst objective diff {worst_obj:.3}, worst utility diff {worst_u:.3}"),
    );
}

#[test]
fn criterion_5_online_loop_convergence() {
    let start = Instant::now();
    let solver = SolverConfig::default();
    let mut detail = String::new();
    let mut pass = true;
    for family in [Family::Pbp, Family::Pip, Family::Aef] {
        let mut config = ExperimentConfig::new(family);
        config.n_markets = 50;
        config.seed = 11;
        let mut at_5 = Vec::new();
        let mut at_50 = Vec::new();
        for k in 0..config.n_markets {
            let sample = generate_market(&config, k as u64, &solver).unwrap();
            let cs = family_constraints(&config, &sample.market);
            let mut oracle = SolverOracle::new(&sample.market, solver);
            let trace =
                run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 50).unwrap();
            at_5.push(time_averaged_violation(&trace, &cs, 5).unwrap().max_violation);
            at_50.push(
                time_averaged_violation(&trace, &cs, 50)
                    .unwrap()
                    .max_violation,
            );
        }
        let mean_5: f64 = at_5.iter().sum::<f64>() / at_5.len() as f64;
        let mean_50: f64 = at_50.iter().sum::<f64>() / at_50.len() as f64;
        pass &= mean_50 < 0.05 && mean_50 < mean_5;
        detail.push_str(&format!(
            "{}: epoch5 {mean_5:.4} -> epoch50 {mean_50:.4}; ",
            family.name()
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed.as_secs_f64() < 300.0;
    detail.push_str(&format!("{elapsed:.0?}"));
    conclude("5 online-loop convergence", pass, &detail);
}

#[test]
fn criterion_6a_kkt_residuals_on_random_markets() {
    let solver = SolverConfig::default();
    let mut worst = 0.0_f64;
    let mut solves = 0;
    for family in [Family::Pbp, Family::Pip, Family::Aef] {
        let mut config = ExperimentConfig::new(family);
        config.seed = 23;
        for k in 0..50 {
            let sample = generate_market(&config, k as u64, &solver).unwrap();
            let cs = family_constraints(&config, &sample.market);
            let con = solve_constrained_eg(&sample.market, &cs, &solver).unwrap();
            // Residuals recomputed from scratch on both solves.
            let base_report = verify_equilibrium(&sample.market, &sample.baseline, 1e-7);
            let con_report = verify_equilibrium(&sample.market, &con, 1e-7);
            worst = worst.max(base_report.max_residual).max(con_report.max_residual);
            solves += 2;
        }
    }
    let pass = worst <= 1e-4;
    conclude(
        "6a KKT residuals",
        pass,
        &format!("worst residual {worst:.2e} across {solves} solves on 150 markets"),
    );
}

#[test]
fn criterion_6b_within_group_envy() {
    let solver = SolverConfig::default();
    let mut worst = 0.0_f64;
    for family in [Family::Pbp, Family::Pip, Family::Aef] {
        let mut config = ExperimentConfig::new(family);
        config.seed = 31;
        let split = group_split(config.n_buyers, config.n_items);
        let groups = vec![split.buyers_first.clone(), split.buyers_second.clone()];
        for k in 0..50 {
            let sample = generate_market(&config, k as u64, &solver).unwrap();
            let cs = family_constraints(&config, &sample.market);
            let con = solve_constrained_eg(&sample.market, &cs, &solver).unwrap();
            let report = budget_adjusted_envy(&sample.market, &con.alloc, &groups);
            worst = worst.max(report.max_within_group);
        }
    }
    // Reference markets too.
    for (market, cs, groups) in [
        (
            cases::market_t1(),
            cases::constraint_t1(&cases::market_t1()),
            vec![vec![0, 1], vec![2, 3]],
        ),
        (
            cases::market_t2(),
            cases::constraint_t2_pip(&cases::market_t2()),
            vec![vec![0, 1], vec![2, 3]],
        ),
        (
            cases::market_t2(),
            cases::constraint_t2_aef(&cases::market_t2()),
            vec![vec![0, 1], vec![2, 3]],
        ),
    ] {
        let solver = SolverConfig::default();
        let con = solve_constrained_eg(&market, &cs, &solver).unwrap();
        let report = budget_adjusted_envy(&market, &con.alloc, &groups);
        worst = worst.max(report.max_within_group);
    }
    let pass = worst <= 1e-4;
    conclude(
        "6b within-group envy",
        pass,
        &format!("worst within-group envy {worst:.2e}"),
    );
}

#[test]
fn criterion_6c_floor_buyer_item_efficiency() {
    let solver = SolverConfig::default();
    let mut config = ExperimentConfig::new(Family::Aef);
    config.seed = 41;
    let split = group_split(config.n_buyers, config.n_items);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let sample = generate_market(&config, k as u64, &solver).unwrap();
        let cs = family_constraints(&config, &sample.market);
        let con = solve_constrained_eg(&sample.market, &cs, &solver).unwrap();
        let gap = buyer_item_pareto_gap(
            &sample.market,
            &con.alloc.x,
            &split.buyers_first,
            &split.items_first,
        )
        .unwrap()
        .gap;
        worst = worst.max(gap);
    }
    let pass = worst <= 1e-3;
    conclude(
        "6c floor buyer-item efficiency",
        pass,
        &format!("worst buyer-item gap {worst:.2e} over 100 floor markets"),
    );
}

#[test]
fn criterion_6d_unconstrained_efficiency() {
    let solver = SolverConfig::default();
    let mut worst = 0.0_f64;
    for seed in 0..100 {
        let market = random_market(8, 10, 1000 + seed);
        let eq = solve_offset_eg(&market, &Mat::zeros(8, 10), &solver).unwrap();
        let gap = buyer_pareto_gap(&market, &eq.alloc.x).unwrap().gap;
        worst = worst.max(gap);
    }
    let pass = worst <= 1e-4;
    conclude(
        "6d unconstrained efficiency",
        pass,
        &format!("worst buyer gap {worst:.2e} over 100 markets"),
    );
}

#[test]
fn criterion_6e_relative_price_invariance() {
    let solver = SolverConfig::default();
    let c = 0.1;
    let mut worst_price = 0.0_f64;
    let mut worst_u = 0.0_f64;
    for seed in 0..20 {
        let market = random_market(8, 10, 2000 + seed);
        let base = solve_offset_eg(&market, &Mat::zeros(8, 10), &solver).unwrap();
        let shift = Mat::from_rows(&vec![vec![-c; 10]; 8]);
        let shifted = solve_offset_eg(&market, &shift, &solver).unwrap();
        for j in 0..10 {
            worst_price =
                worst_price.max((shifted.prices.base[j] - base.prices.base[j] - c).abs());
        }
        worst_u = worst_u.max(max_abs_diff(
            &shifted.utilities(&market),
            &base.utilities(&market),
        ));
    }
    let pass = worst_price <= 1e-4 && worst_u <= 1e-4;
    conclude(
        "6e relative-price invariance",
        pass,
        &format!("worst price shift error {worst_price:.2e}, worst utility change {worst_u:.2e}"),
    );
}

#[test]
fn criterion_7_winners_and_losers() {
    let solver = SolverConfig::default();
    let mut pass = true;
    let mut detail = String::new();
    for family in [Family::Aef, Family::Pbp, Family::Pip] {
        let mut config = ExperimentConfig::new(family);
        config.n_markets = 100;
        config.seed = 53;
        let targets = fairmarket::generate::target_buyers(&config);
        let mut target_deltas = Vec::new();
        let mut other_deltas = Vec::new();
        for k in 0..config.n_markets {
            let sample = generate_market(&config, k as u64, &solver).unwrap();
            let cs = family_constraints(&config, &sample.market);
            let con = solve_constrained_eg(&sample.market, &cs, &solver).unwrap();
            let u_base = sample.baseline.utilities(&sample.market);
            let u_con = con.utilities(&sample.market);
            for i in 0..sample.market.n_buyers() {
                let d = u_con[i] - u_base[i];
                if targets.contains(&i) {
                    target_deltas.push(d);
                } else {
                    other_deltas.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        match family {
            Family::Aef => {
                let mt = mean(&target_deltas);
                let mo = mean(&other_deltas);
                pass &= mt > 0.0 && mo < 0.0;
                detail.push_str(&format!("aef: target {mt:+.4}, other {mo:+.4}; "));
            }
            Family::Pbp | Family::Pip => {
                let straddle = |v: &[f64]| percentile(v, 0.05) < 0.0 && percentile(v, 0.95) > 0.0;
                let st = straddle(&target_deltas);
                let so = straddle(&other_deltas);
                pass &= st && so;
                detail.push_str(&format!(
                    "{}: target [{:+.3},{:+.3}], other [{:+.3},{:+.3}]; ",
                    family.name(),
                    percentile(&target_deltas, 0.05),
                    percentile(&target_deltas, 0.95),
                    percentile(&other_deltas, 0.05),
                    percentile(&other_deltas, 0.95),
                ));
            }
        }
    }
    conclude("7 winners and losers", pass, &detail);
}

#[test]
fn criterion_8_deterministic_outputs() {
    let solver = SolverConfig::default();
    let run_once = || {
        let mut config = ExperimentConfig::new(Family::Pip);
        config.n_markets = 5;
        config.seed = 61;
        config.opic_rounds = 15;
        let report =
            fairmarket::experiments::run_random_experiments(&config, &solver).unwrap();
        let mut buyers_csv = Vec::new();
        report.write_csv(&mut buyers_csv).unwrap();
        let mut violation_csv = Vec::new();
        report.write_violation_csv(&mut violation_csv).unwrap();
        let svg = fairmarket::chart::render(&report.violation_chart()).unwrap();
        (buyers_csv, violation_csv, svg)
    };
    let a = run_once();
    let b = run_once();
    let trace_once = || {
        let market = cases::market_t1();
        let cs = cases::constraint_t1(&market);
        let mut oracle = SolverOracle::new(&market, solver);
        let trace = run_opic(&mut oracle, &cs, RateSchedule::Constant(0.2), 20).unwrap();
        let mut csv = Vec::new();
        trace.write_csv(&cs, &mut csv).unwrap();
        csv
    };
    let t1 = trace_once();
    let t2 = trace_once();
    let pass = a == b && t1 == t2;
    conclude(
        "8 deterministic outputs",
        pass,
        &format!(
            "experiment csv {} B, violation csv {} B, svg {} B, trace {} B all byte-identical",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            t1.len()
        ),
    );
}

// Keep the set-based builders honest about the group split used above.
#[test]
fn group_split_matches_builder_sets() {
    let split = group_split(8, 10);
    assert_eq!(split.buyers_first, (0..4).collect::<Vec<_>>());
    assert_eq!(split.items_first, (0..5).collect::<Vec<_>>());
    let as_set: BTreeSet<usize> = split.buyers_first.iter().copied().collect();
    assert_eq!(as_set.len(), 4);
}
