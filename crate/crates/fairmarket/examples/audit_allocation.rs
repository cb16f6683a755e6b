//! Audit who wins and who loses from an intervention.
//!
//! Solves a floor-constrained market, then measures budget-adjusted envy,
//! both Pareto gaps (with and without credit for the protected exposure),
//! exposure shifts, and per-buyer utility deltas.
//!
//! ```bash
//! cargo run --release --example audit_allocation
//! ```

use fairmarket::audit::{
    budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, exposure, welfare_delta,
};
use fairmarket::cases::{constraint_t6, market_t6};
use fairmarket::solver::{solve_constrained_eg, solve_offset_eg, SolverConfig};
use fairmarket::Mat;

fn main() {
    let market = market_t6();
    let cs = constraint_t6(&market);
    let config = SolverConfig::default();

    let base = solve_offset_eg(&market, &Mat::zeros(2, 2), &config).unwrap();
    let constrained = solve_constrained_eg(&market, &cs, &config).unwrap();

    println!("utilities before: {:?}", base.utilities(&market));
    println!("utilities after:  {:?}", constrained.utilities(&market));

    let delta = welfare_delta(&market, &base, &constrained, &[0]);
    println!("per-buyer deltas: {:?}", delta.per_buyer);

    println!(
        "protected exposure: {:.3} -> {:.3}",
        exposure(&base.alloc.x, &[0], &[0]),
        exposure(&constrained.alloc.x, &[0], &[0])
    );

    // Buyer-only: moving the worthless holding to the other buyer would
    // raise total value, so the gap is positive. Holding the protected
    // exposure fixed, nothing can be improved.
    let buyer_only = buyer_pareto_gap(&market, &constrained.alloc.x).unwrap();
    let buyer_item = buyer_item_pareto_gap(&market, &constrained.alloc.x, &[0], &[0]).unwrap();
    println!("buyer-only Pareto gap: {:.4}", buyer_only.gap);
    if let Some(cert) = &buyer_only.certificate {
        println!("  improving allocation: {:?} / {:?}", cert.row(0), cert.row(1));
    }
    println!("buyer-item Pareto gap: {:.4}", buyer_item.gap);

    let envy = budget_adjusted_envy(&market, &constrained.alloc, &[vec![0], vec![1]]);
    println!("worst within-group envy: {:.2e}", envy.max_within_group);
    println!("worst overall envy: {:.4}", envy.max_overall);
}
