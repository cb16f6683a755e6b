//! Phase-one feasibility pre-solve for the constrained program.
//!
//! Minimizes the total constraint violation over the supply polytope. A
//! positive minimum is an infeasibility certificate; otherwise the report
//! carries a feasible point and, when inequality rows exist, the largest
//! margin by which they can be satisfied strictly (the strong-duality
//! condition behind the multiplier construction).

use crate::audit::lp::{solve_lp, LinearProgram, LpOutcome};
use crate::constraints::LinearConstraintSet;
use crate::market::Market;
use crate::mat::Mat;

use super::SolveError;

const FEAS_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct FeasibilityReport {
    /// Smallest achievable total violation across all constraint rows.
    pub min_total_violation: f64,
    /// Rows still violated at the optimum, with their violations.
    pub violated_rows: Vec<(String, f64)>,
    /// Margin of the most-binding inequality at the most-interior point;
    /// `None` when there are no inequality rows. Nonpositive margins mean
    /// no strictly feasible point exists.
    pub slater_margin: Option<f64>,
    /// A feasible (or least-violating) allocation.
    pub point: Mat,
}

pub fn feasibility_presolve(
    market: &Market,
    cs: &LinearConstraintSet,
) -> Result<FeasibilityReport, SolveError> {
    let n = market.n_buyers();
    let m = market.m_items();
    let nm = n * m;
    let k1 = cs.n_ineq();
    let k2 = cs.n_eq();

    // Variables: x (n*m), one violation slack per inequality, two per equality.
    let total = nm + k1 + 2 * k2;
    let mut objective = vec![0.0; total];
    for c in objective.iter_mut().skip(nm) {
        *c = -1.0;
    }
    let mut lp = LinearProgram::new(objective);
    lp.n_vars = total;
    lp.lower_bounds = vec![0.0; total];

    for j in 0..m {
        let mut row = vec![0.0; total];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        lp.less_equal(row, market.supplies()[j]);
    }
    for k in 0..k1 {
        let mut row = vec![0.0; total];
        for t in cs.ineq_terms().iter().filter(|t| t.row == k) {
            row[t.buyer * m + t.item] += t.coef;
        }
        row[nm + k] = -1.0;
        lp.less_equal(row, cs.ineq_rhs()[k]);
    }
    for k in 0..k2 {
        let mut row = vec![0.0; total];
        for t in cs.eq_terms().iter().filter(|t| t.row == k) {
            row[t.buyer * m + t.item] += t.coef;
        }
        row[nm + k1 + 2 * k] = 1.0;
        row[nm + k1 + 2 * k + 1] = -1.0;
        lp.equal(row, cs.eq_rhs()[k]);
    }

    let (value, solution) = match solve_lp(&lp)
        .map_err(|e| SolveError::Numeric(format!("feasibility pre-solve: {e}")))?
    {
        LpOutcome::Optimal { value, x } => (value, x),
        // x = 0 with large slacks is always feasible for this program.
        _ => unreachable!("phase-one program always has a feasible point"),
    };
    let min_total_violation = -value;

    let mut point = Mat::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            point.set(i, j, solution[i * m + j]);
        }
    }
    let mut violated_rows = Vec::new();
    for k in 0..k1 {
        let v = solution[nm + k];
        if v > FEAS_TOL {
            violated_rows.push((cs.ineq_labels()[k].clone(), v));
        }
    }
    for k in 0..k2 {
        let v = solution[nm + k1 + 2 * k] + solution[nm + k1 + 2 * k + 1];
        if v > FEAS_TOL {
            violated_rows.push((cs.eq_labels()[k].clone(), v));
        }
    }

    if min_total_violation > FEAS_TOL {
        let report = FeasibilityReport {
            min_total_violation,
            violated_rows,
            slater_margin: None,
            point,
        };
        return Err(SolveError::Infeasible {
            min_violation: min_total_violation,
            report: Box::new(report),
        });
    }

    // Slater margin: maximize t with A1 x + t <= b1 over the feasible set.
    let slater_margin = if k1 == 0 {
        None
    } else {
        let total = nm + 1;
        let mut objective = vec![0.0; total];
        objective[nm] = 1.0;
        let mut lp = LinearProgram::new(objective);
        lp.n_vars = total;
        lp.lower_bounds = vec![0.0; total];
        // Allow a negative margin so weak feasibility is still reported.
        lp.lower_bounds[nm] = -1e3;
        for j in 0..m {
            let mut row = vec![0.0; total];
            for i in 0..n {
                row[i * m + j] = 1.0;
            }
            lp.less_equal(row, market.supplies()[j]);
        }
        for k in 0..k1 {
            let mut row = vec![0.0; total];
            for t in cs.ineq_terms().iter().filter(|t| t.row == k) {
                row[t.buyer * m + t.item] += t.coef;
            }
            row[nm] = 1.0;
            lp.less_equal(row, cs.ineq_rhs()[k]);
        }
        for k in 0..k2 {
            let mut row = vec![0.0; total];
            for t in cs.eq_terms().iter().filter(|t| t.row == k) {
                row[t.buyer * m + t.item] += t.coef;
            }
            lp.equal(row, cs.eq_rhs()[k]);
        }
        match solve_lp(&lp) {
            Ok(LpOutcome::Optimal { value, .. }) => Some(value),
            Ok(LpOutcome::Unbounded) => Some(f64::INFINITY),
            _ => None,
        }
    };

    Ok(FeasibilityReport {
        min_total_violation,
        violated_rows,
        slater_margin,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::build_aef;
    use crate::market::Market;
    use std::collections::BTreeSet;

    #[test]
    fn feasible_floor_reports_margin() {
        let v = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_aef(
            &market,
            &BTreeSet::from([0]),
            &BTreeSet::from([0]),
            0.5,
        )
        .unwrap();
        let report = feasibility_presolve(&market, &cs).unwrap();
        assert!(report.min_total_violation <= 1e-9);
        // Floor 0.5 on a unit-supply item leaves a 0.5 strict margin.
        let margin = report.slater_margin.unwrap();
        assert!((margin - 0.5).abs() < 1e-6, "margin {margin}");
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let v = Mat::from_rows(&[vec![1.0, 1.0]]);
        let market = Market::new(vec![1.0], v).unwrap();
        let mut cs = crate::constraints::LinearConstraintSet::empty(1, 2);
        cs.push_eq(&[(0, 0, 1.0)], 0.8, "want().8").unwrap();
        cs.push_eq(&[(0, 0, 1.0)], 0.2, "want().2").unwrap();
        let err = feasibility_presolve(&market, &cs);
        match err {
            Err(SolveError::Infeasible { min_violation, report }) => {
                assert!(min_violation > 0.5);
                assert!(!report.violated_rows.is_empty());
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}
