//! Independent equilibrium audit.
//!
//! `verify_equilibrium` recomputes every optimality residual from the
//! returned triple alone, using only the closed-form demand oracle and the
//! constraint operators, never the solver's internal state. It reports,
//! per buyer and per item:
//!
//! * demand gap: best affordable utility at the effective prices minus the
//!   utility actually received;
//! * clearing: positively priced items must sell out exactly;
//! * budget balance: spending plus leftover must equal the budget;
//! * complementary slackness on the inequality multipliers;
//! * stationarity slack `mu_ij = q_ij - v_ij B_i / u_i`, which must be
//!   nonnegative and vanish wherever `x_ij > 0`;
//! * leftover slack `nu_i = 1 - B_i / u_i`, nonnegative and vanishing
//!   wherever the buyer holds money.

use crate::constraints::evaluate_constraints;
use crate::market::{demand_response, DemandResponse, Market, TIE_TOL};
use crate::mat::Mat;

use super::TaxSubsidyEquilibrium;

#[derive(Clone, Debug)]
pub struct KktReport {
    pub demand_gap: Vec<f64>,
    pub clearing_residual: Vec<f64>,
    pub budget_residual: Vec<f64>,
    pub comp_slack_ineq: Vec<f64>,
    pub ineq_violation: Vec<f64>,
    pub eq_residual: Vec<f64>,
    /// `mu_ij = p_j + pbar_ij - v_ij B_i / u_i`.
    pub stationarity_slack: Mat,
    /// `nu_i = 1 - B_i / u_i`.
    pub leftover_slack: Vec<f64>,
    pub max_residual: f64,
}

impl KktReport {
    pub(crate) fn empty(n: usize, m: usize) -> Self {
        Self {
            demand_gap: vec![0.0; n],
            clearing_residual: vec![0.0; m],
            budget_residual: vec![0.0; n],
            comp_slack_ineq: Vec::new(),
            ineq_violation: Vec::new(),
            eq_residual: Vec::new(),
            stationarity_slack: Mat::zeros(n, m),
            leftover_slack: vec![0.0; n],
            max_residual: f64::INFINITY,
        }
    }
}

/// Recomputes the KKT residuals of a claimed equilibrium from scratch.
/// This is a report, not a judgment: nothing is rejected here.
pub fn verify_equilibrium(
    market: &Market,
    eq: &TaxSubsidyEquilibrium,
    tol: f64,
) -> KktReport {
    let n = market.n_buyers();
    let m = market.m_items();
    let alloc = &eq.alloc;
    let prices = &eq.prices;
    let mut worst = 0.0_f64;

    let mut demand_gap = vec![0.0; n];
    let mut budget_residual = vec![0.0; n];
    let mut leftover_slack = vec![0.0; n];
    let mut stationarity_slack = Mat::zeros(n, m);

    for i in 0..n {
        let q = prices.effective_row(i);
        let u = alloc.utility(market, i);
        let spend: f64 = q
            .iter()
            .zip(alloc.x.row(i))
            .map(|(qj, xj)| qj * xj)
            .sum();
        budget_residual[i] = (spend + alloc.delta[i] - market.budget(i)).abs();
        worst = worst.max(budget_residual[i]);

        match demand_response(market.valuation_row(i), market.budget(i), &q, TIE_TOL) {
            Ok(DemandResponse::Bounded(bundle)) => {
                // Best utility reachable with the money this bundle ties up;
                // identical to the budget-based bound when budgets balance,
                // but it also exposes misallocated spending when they do not.
                let best = (spend + alloc.delta[i]) * bundle.bang_per_buck.max(1.0);
                demand_gap[i] = (best - u).max(0.0);
            }
            _ => {
                demand_gap[i] = f64::INFINITY;
            }
        }
        worst = worst.max(demand_gap[i]);

        if u > 0.0 {
            let nu = 1.0 - market.budget(i) / u;
            leftover_slack[i] = nu;
            if alloc.delta[i] > tol {
                worst = worst.max(nu.abs());
            } else {
                worst = worst.max((-nu).max(0.0));
            }
            for j in 0..m {
                let v = market.valuations().get(i, j);
                let mu = q[j] - v * market.budget(i) / u;
                stationarity_slack.set(i, j, mu);
                worst = worst.max((-mu).max(0.0));
                worst = worst.max((mu * alloc.x.get(i, j)).max(0.0));
            }
        } else {
            demand_gap[i] = f64::INFINITY;
            worst = f64::INFINITY;
        }
    }

    let mut clearing_residual = vec![0.0; m];
    for j in 0..m {
        let sold = alloc.x.col_sum(j);
        let excess = sold - market.supplies()[j];
        let price_positive = prices.base[j] > tol;
        let any_effective_positive =
            (0..n).any(|i| prices.effective(i, j) > tol);
        clearing_residual[j] = if price_positive && any_effective_positive {
            excess.abs()
        } else {
            excess.max(0.0)
        };
        worst = worst.max(clearing_residual[j]);
    }

    let residual = evaluate_constraints(&eq.constraints, &alloc.x);
    let ineq_violation: Vec<f64> = residual.ineq.iter().map(|r| r.max(0.0)).collect();
    let comp_slack_ineq: Vec<f64> = residual
        .ineq
        .iter()
        .zip(&eq.multipliers.ineq)
        .map(|(r, l)| l * r.abs())
        .collect();
    let eq_residual = residual.eq.clone();
    for v in &ineq_violation {
        worst = worst.max(*v);
    }
    for v in &comp_slack_ineq {
        worst = worst.max(*v);
    }
    for v in &eq_residual {
        worst = worst.max(v.abs());
    }
    // Negative inequality multipliers are a dual infeasibility.
    for l in &eq.multipliers.ineq {
        worst = worst.max((-l).max(0.0));
    }

    KktReport {
        demand_gap,
        clearing_residual,
        budget_residual,
        comp_slack_ineq,
        ineq_violation,
        eq_residual,
        stationarity_slack,
        leftover_slack,
        max_residual: worst,
    }
}
