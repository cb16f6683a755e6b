//! The three constraint families and the taxes/subsidies that implement
//! them.
//!
//! Solving the constrained program yields multipliers on each constraint
//! row; pushing them through the constraint operators gives a per-buyer
//! price intervention matrix, and the resulting triple (allocation, base
//! prices, interventions) is a market equilibrium whose allocation
//! satisfies the constraints.
//!
//! ```bash
//! cargo run --release --example fairness_constraints
//! ```

use std::collections::BTreeSet;

use fairmarket::solver::{solve_constrained_eg, SolverConfig};
use fairmarket::{build_aef, build_pbp, Market, Mat};

fn main() {
    let config = SolverConfig::default();

    // Per-buyer parity: buyer 0 must split evenly between the two items.
    // The intervention is a tax on its favored item and an equal subsidy
    // on the other one.
    let market = Market::new(
        vec![1.0, 1.0],
        Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]),
    )
    .unwrap();
    let parity = build_pbp(
        &market,
        &BTreeSet::from([0]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1]),
        1.0,
    )
    .unwrap();
    let eq = solve_constrained_eg(&market, &parity, &config).unwrap();
    println!("== per-buyer parity ==");
    println!("multiplier: {:?}", eq.multipliers.eq);
    println!("buyer 0 interventions: {:?}", eq.prices.interventions.row(0));
    println!("base prices: {:?}", eq.prices.base);
    println!("utilities: {:?}", eq.utilities(&market));
    println!("buyer 0 bundle: {:?}\n", eq.alloc.x.row(0));

    // Exposure floor: buyer 0 values only the second item but must hold
    // half a unit of the first. The intervention is a blanket subsidy that
    // makes the protected item free for the constrained buyer.
    let market = Market::new(
        vec![1.0, 1.0],
        Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]),
    )
    .unwrap();
    let floor = build_aef(&market, &BTreeSet::from([0]), &BTreeSet::from([0]), 0.5).unwrap();
    let eq = solve_constrained_eg(&market, &floor, &config).unwrap();
    println!("== exposure floor ==");
    println!("floor multiplier (subsidy size): {:?}", eq.multipliers.ineq);
    println!("buyer 0 interventions: {:?}", eq.prices.interventions.row(0));
    println!(
        "effective price of the protected item for buyer 0: {:.3}",
        eq.prices.effective(0, 0)
    );
    println!("protected holding: {:.3}", eq.alloc.x.get(0, 0));
    println!("utilities: {:?}", eq.utilities(&market));
}
