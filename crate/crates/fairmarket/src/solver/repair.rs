//! Demand-set tie repair.
//!
//! Dual methods leave ties unresolved: at the optimal prices a buyer may be
//! indifferent between items (or between buying and keeping money), and any
//! point of its demand polytope is a best response. This LP picks one point
//! per buyer so that supply clears, equalities hold, and tight inequalities
//! stay tight, minimizing the total slack it cannot remove. Variables are
//! restricted to each buyer's demand set, so the result is an equilibrium
//! allocation whenever the duals are accurate.

use thiserror::Error;

use crate::audit::lp::{solve_lp, LinearProgram, LpError, LpOutcome};
use crate::constraints::Multipliers;
use crate::mat::Mat;

use super::dual::{DualProblem, DualSolution};
use super::polish::{clamp_signs, detect, dual_scale};
use super::Candidate;

#[derive(Debug, Error)]
pub(crate) enum RepairError {
    #[error("a positively valued item has effective price ~0; demand is unbounded")]
    Saturating,
    #[error("tie repair program failed: {0}")]
    Lp(#[from] LpError),
    #[error("tie repair program is infeasible or unbounded")]
    Degenerate,
}

pub(crate) fn repair(
    problem: &DualProblem,
    duals: &DualSolution,
) -> Result<Candidate, RepairError> {
    let market = problem.market;
    let n = market.n_buyers();
    let m = problem.m;
    let z = clamp_signs(problem, &duals.z);
    let s = detect(problem, &z);
    if s.saturating {
        return Err(RepairError::Saturating);
    }

    // Variable layout: one x per admissible pair, then penalty slacks.
    let mut pair_var: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n]; // (item, var)
    let mut n_vars = 0;
    for i in 0..n {
        for &j in &s.argmax[i] {
            pair_var[i].push((j, n_vars));
            n_vars += 1;
        }
    }
    for &(i, j) in &s.zero_pairs {
        if !pair_var[i].iter().any(|&(jj, _)| jj == j) {
            pair_var[i].push((j, n_vars));
            n_vars += 1;
        }
    }
    let n_x = n_vars;

    let scale = dual_scale(&z);
    let mut objective = vec![0.0; n_x];
    let mut rows_le: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut rows_eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut n_slack = 0;
    let mut slack = |obj: &mut Vec<f64>, cost: f64| {
        let ix = n_x + n_slack;
        n_slack += 1;
        obj.push(-cost);
        ix
    };

    // Budgets: exact for committed spenders, capped for indifferent ones.
    for i in 0..n {
        let coeffs: Vec<(usize, f64)> = pair_var[i]
            .iter()
            .map(|&(j, var)| (var, problem.effective_price(&z, i, j)))
            .collect();
        if coeffs.is_empty() {
            continue;
        }
        if s.delta_active[i] {
            rows_le.push((coeffs, market.budget(i)));
        } else {
            rows_eq.push((coeffs, market.budget(i)));
        }
    }

    // Clearing with two-sided slack on positively priced items, one-sided
    // cap on the rest.
    for j in 0..m {
        let mut coeffs = Vec::new();
        for i in 0..n {
            if let Some(&(_, var)) = pair_var[i].iter().find(|&&(jj, _)| jj == j) {
                coeffs.push((var, 1.0));
            }
        }
        if s.free_price[j] {
            let up = slack(&mut objective, 1.0);
            let dn = slack(&mut objective, 1.0);
            let mut row = coeffs;
            row.push((up, 1.0));
            row.push((dn, -1.0));
            rows_eq.push((row, market.supplies()[j]));
        } else if !coeffs.is_empty() {
            rows_le.push((coeffs, market.supplies()[j]));
        }
    }

    // Equality constraints with two-sided slack.
    for k in 0..problem.k2 {
        let mut row = Vec::new();
        for t in problem.cs.eq_terms().iter().filter(|t| t.row == k) {
            if let Some(&(_, var)) = pair_var[t.buyer]
                .iter()
                .find(|&&(jj, _)| jj == t.item)
            {
                row.push((var, t.coef));
            }
        }
        let up = slack(&mut objective, 1.0);
        let dn = slack(&mut objective, 1.0);
        row.push((up, 1.0));
        row.push((dn, -1.0));
        rows_eq.push((row, problem.cs.eq_rhs()[k]));
    }

    // Inequalities: a penalized violation slack keeps the program feasible;
    // rows with positive multipliers also get their slack-side deviation
    // penalized so complementary slackness holds.
    for k in 0..problem.k1 {
        let mut row = Vec::new();
        for t in problem.cs.ineq_terms().iter().filter(|t| t.row == k) {
            if let Some(&(_, var)) = pair_var[t.buyer]
                .iter()
                .find(|&&(jj, _)| jj == t.item)
            {
                row.push((var, t.coef));
            }
        }
        if s.active_ineq[k] {
            let up = slack(&mut objective, 1.0);
            let dn = slack(&mut objective, 1.0);
            row.push((up, 1.0));
            row.push((dn, -1.0));
            rows_eq.push((row, problem.cs.ineq_rhs()[k]));
        } else {
            let viol = slack(&mut objective, 1.0);
            row.push((viol, -1.0));
            rows_le.push((row, problem.cs.ineq_rhs()[k]));
        }
    }

    let total_vars = n_x + n_slack;
    let mut lp = LinearProgram::new(objective);
    lp.n_vars = total_vars;
    lp.lower_bounds = vec![0.0; total_vars];
    let densify = |row: &[(usize, f64)]| {
        let mut dense = vec![0.0; total_vars];
        for &(var, c) in row {
            dense[var] += c;
        }
        dense
    };
    for (row, rhs) in &rows_le {
        lp.less_equal(densify(row), *rhs);
    }
    for (row, rhs) in &rows_eq {
        lp.equal(densify(row), *rhs);
    }

    let solution = match solve_lp(&lp)? {
        LpOutcome::Optimal { x, .. } => x,
        _ => return Err(RepairError::Degenerate),
    };

    let mut x = Mat::zeros(n, m);
    let mut delta = vec![0.0; n];
    for i in 0..n {
        let mut spend = 0.0;
        for &(j, var) in &pair_var[i] {
            let q = problem.effective_price(&z, i, j);
            x.set(i, j, solution[var].max(0.0));
            spend += q * solution[var];
        }
        delta[i] = (market.budget(i) - spend).max(0.0);
        // Committed spenders hold no money even if the LP left crumbs.
        if !s.delta_active[i] && delta[i] < 1e-6 * scale {
            delta[i] = 0.0;
        }
    }

    let prices = z[..m].to_vec();
    let mult = Multipliers {
        ineq: z[m..m + problem.k1].to_vec(),
        eq: z[m + problem.k1..].to_vec(),
    };
    Ok(Candidate {
        x,
        delta,
        prices,
        mult,
    })
}
