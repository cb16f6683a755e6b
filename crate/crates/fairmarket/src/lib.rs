//! Fisher market equilibria with linear fairness constraints implemented
//! through taxes and subsidies.
//!
//! Buyers with budgets and linear valuations compete for divisible items.
//! The library computes the quasi-linear market equilibrium, turns
//! arbitrary linear constraints on the allocation into per-buyer price
//! interventions (the multipliers of the constrained program, pushed
//! through the constraint operators), runs the online learning loop that
//! finds those interventions from observed allocations alone, and audits
//! the welfare and fairness consequences: budget-adjusted envy, Pareto
//! gaps, exposure shifts, winners and losers.
//!
//! The short version:
//!
//! ```
//! use fairmarket::{build_pbp, solve_constrained_eg, Market, Mat, SolverConfig};
//! use std::collections::BTreeSet;
//!
//! let market = Market::new(
//!     vec![1.0, 1.0],
//!     Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]),
//! )?;
//! // Buyer 0 must split its purchases evenly between the two items.
//! let parity = build_pbp(
//!     &market,
//!     &BTreeSet::from([0]),
//!     &BTreeSet::from([0]),
//!     &BTreeSet::from([1]),
//!     1.0,
//! )?;
//! let eq = solve_constrained_eg(&market, &parity, &SolverConfig::default())?;
//! // The multiplier became a tax on one item and a subsidy on the other,
//! // and the equilibrium allocation satisfies the constraint.
//! assert!((eq.prices.interventions.get(0, 0) + eq.prices.interventions.get(0, 1)).abs() < 1e-9);
//! assert!((eq.alloc.x.get(0, 0) - eq.alloc.x.get(0, 1)).abs() < 1e-9);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! The runnable examples cover each capability end to end:
//!
//! ```bash
//! cargo run --release --example solve_market
//! cargo run --release --example fairness_constraints
//! cargo run --release --example online_interventions
//! cargo run --release --example audit_allocation
//! cargo run --release --example reference_markets
//! cargo run --release --example random_experiments
//! ```

pub mod audit;
pub mod cases;
pub mod chart;
pub mod constraints;
pub mod experiments;
pub mod generate;
pub mod market;
pub mod mat;
pub mod opic;
pub mod scenario;
pub mod solver;

pub use constraints::{
    build_aef, build_pbp, build_pip, equal_exposure_alpha, evaluate_constraints,
    interventions_from_multipliers, ConstraintResidual, LinearConstraintSet, Multipliers,
};
pub use market::{
    demand_response, eg_objective, excess_demand, linear_utility, Allocation, DemandBundle,
    DemandResponse, Market, MarketError, PriceSystem,
};
pub use mat::Mat;
pub use opic::{
    opic_step, run_opic, time_averaged_violation, EquilibriumOracle, OpicState, OpicTrace,
    RateSchedule, SolverOracle,
};
pub use solver::{
    brute_force_eg, feasibility_presolve, solve_constrained_eg, solve_offset_eg,
    verify_equilibrium, KktReport, SolveError, SolverConfig, StepSchedule,
    TaxSubsidyEquilibrium,
};
