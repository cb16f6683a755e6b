//! Dense two-phase simplex with Bland's rule.
//!
//! Problem sizes here are a few hundred variables at most, so a dense
//! tableau is the right tradeoff: deterministic pivoting, no factorization
//! machinery, and exact-ish arithmetic at these scales. Bland's rule makes
//! cycling impossible.

use thiserror::Error;

use crate::mat::dot;

const PIVOT_EPS: f64 = 1e-9;
const FEAS_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("objective length {got} does not match variable count {expected}")]
    BadObjective { expected: usize, got: usize },
    #[error("row {row} has {got} coefficients, expected {expected}")]
    BadRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite coefficient in the program")]
    NonFinite,
    #[error("pivot limit reached after {0} pivots")]
    PivotLimit(usize),
    #[error("solution failed the substitution check (violation {0:.3e})")]
    Unstable(f64),
}

/// `maximize objective . x` subject to `ineq . x <= rhs`, `eq . x = rhs`,
/// and `x >= lower_bounds` (zeros by default).
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub ineq: Vec<(Vec<f64>, f64)>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub lower_bounds: Vec<f64>,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            n_vars: n,
            objective,
            ineq: Vec::new(),
            eq: Vec::new(),
            lower_bounds: vec![0.0; n],
        }
    }

    pub fn less_equal(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.ineq.push((coeffs, rhs));
        self
    }

    pub fn equal(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq.push((coeffs, rhs));
        self
    }

    /// `coeffs . x >= rhs`, stored as a negated `<=` row.
    pub fn greater_equal(&mut self, coeffs: Vec<f64>, rhs: f64) -> &mut Self {
        let neg: Vec<f64> = coeffs.iter().map(|c| -c).collect();
        self.ineq.push((neg, -rhs));
        self
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.n_vars {
            return Err(LpError::BadObjective {
                expected: self.n_vars,
                got: self.objective.len(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|c| c.is_finite());
        if !finite(&self.objective) || !finite(&self.lower_bounds) {
            return Err(LpError::NonFinite);
        }
        for (k, (coeffs, rhs)) in self.ineq.iter().chain(self.eq.iter()).enumerate() {
            if coeffs.len() != self.n_vars {
                return Err(LpError::BadRow {
                    row: k,
                    expected: self.n_vars,
                    got: coeffs.len(),
                });
            }
            if !finite(coeffs) || !rhs.is_finite() {
                return Err(LpError::NonFinite);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    n_total: usize,
    artificial_offset: usize,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    /// Bland's rule: entering = lowest-index improving column, leaving =
    /// minimum ratio with lowest basis index on ties.
    fn iterate(&mut self, allow_artificials: bool) -> Result<LpStatus, LpError> {
        let limit = if allow_artificials {
            self.n_total
        } else {
            self.artificial_offset
        };
        loop {
            if self.pivots >= self.max_pivots {
                return Err(LpError::PivotLimit(self.pivots));
            }
            let mut entering = None;
            for col in 0..limit {
                if self.obj[col] < -PIVOT_EPS {
                    entering = Some(col);
                    break;
                }
            }
            let Some(entering) = entering else {
                return Ok(LpStatus::Optimal);
            };
            let mut leaving: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.rows.len() {
                let a = self.rows[r][entering];
                if a > PIVOT_EPS {
                    let ratio = self.rows[r][self.n_total] / a;
                    let better = ratio < best_ratio - 1e-12
                        || ((ratio - best_ratio).abs() <= 1e-12
                            && leaving.is_some_and(|lr| self.basis[r] < self.basis[lr]));
                    if leaving.is_none() || better {
                        best_ratio = ratio;
                        leaving = Some(r);
                    }
                }
            }
            let Some(leaving) = leaving else {
                return Ok(LpStatus::Unbounded);
            };
            self.pivot(leaving, entering);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let pv = self.rows[row][col];
        for v in &mut self.rows[row] {
            *v /= pv;
        }
        for r in 0..self.rows.len() {
            if r == row {
                continue;
            }
            let f = self.rows[r][col];
            if f.abs() > 1e-13 {
                for c in 0..=self.n_total {
                    self.rows[r][c] -= f * self.rows[row][c];
                }
            }
        }
        let f = self.obj[col];
        if f.abs() > 1e-13 {
            for c in 0..=self.n_total {
                self.obj[c] -= f * self.rows[row][c];
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Rebuilds the reduced-cost row for maximizing `c`.
    fn set_objective(&mut self, c: &[f64]) {
        for col in 0..self.n_total {
            self.obj[col] = -c.get(col).copied().unwrap_or(0.0);
        }
        self.obj[self.n_total] = 0.0;
        for r in 0..self.rows.len() {
            let cb = c.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for col in 0..=self.n_total {
                    self.obj[col] += cb * self.rows[r][col];
                }
            }
        }
    }
}

enum LpStatus {
    Optimal,
    Unbounded,
}

/// Solves the program. Optimal solutions are re-checked by substitution
/// before being returned.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.validate()?;
    let n = lp.n_vars;

    // Shift x = y + lower_bounds so every decision variable is >= 0.
    let lb = &lp.lower_bounds;
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new(); // (coeffs, rhs, is_eq)
    for (coeffs, rhs) in &lp.ineq {
        rows.push((coeffs.clone(), rhs - dot(coeffs, lb), false));
    }
    for (coeffs, rhs) in &lp.eq {
        rows.push((coeffs.clone(), rhs - dot(coeffs, lb), true));
    }

    // Normalize row scales; keeps the ratio test honest when coefficient
    // magnitudes differ wildly.
    for (coeffs, rhs, _) in &mut rows {
        let scale = coeffs.iter().fold(0.0_f64, |a, c| a.max(c.abs()));
        if scale > 1e-12 {
            for c in coeffs.iter_mut() {
                *c /= scale;
            }
            *rhs /= scale;
        }
    }

    let m = rows.len();
    // Flip equality rows to get nonnegative right-hand sides. Negative-rhs
    // <= rows keep their sign; they get a surplus column below instead of
    // a slack basis.
    for (coeffs, rhs, is_eq) in &mut rows {
        if *rhs < 0.0 && *is_eq {
            for c in coeffs.iter_mut() {
                *c = -*c;
            }
            *rhs = -*rhs;
        }
    }

    let needs_artificial: Vec<bool> = rows
        .iter()
        .map(|(_, rhs, is_eq)| *is_eq || *rhs < 0.0)
        .collect();
    let n_slack = m; // one slack/surplus column per inequality-or-equality row
    let n_art = needs_artificial.iter().filter(|b| **b).count();
    let artificial_offset = n + n_slack;
    let n_total = artificial_offset + n_art;

    let mut t = Tableau {
        rows: vec![vec![0.0; n_total + 1]; m],
        obj: vec![0.0; n_total + 1],
        basis: vec![0; m],
        n_total,
        artificial_offset,
        pivots: 0,
        max_pivots: 50_000 + 200 * (n_total + m),
    };

    let mut art_idx = 0;
    for (r, (coeffs, rhs, is_eq)) in rows.iter().enumerate() {
        let (coeffs, rhs, flip) = if !*is_eq && *rhs < 0.0 {
            // a.y <= rhs < 0  ->  -a.y - s = -rhs with artificial basis.
            (
                coeffs.iter().map(|c| -c).collect::<Vec<_>>(),
                -rhs,
                true,
            )
        } else {
            (coeffs.clone(), *rhs, false)
        };
        t.rows[r][..n].copy_from_slice(&coeffs);
        t.rows[r][n_total] = rhs;
        let slack_col = n + r;
        if *is_eq {
            // No slack; artificial only.
            t.rows[r][slack_col] = 0.0;
        } else {
            t.rows[r][slack_col] = if flip { -1.0 } else { 1.0 };
        }
        if needs_artificial[r] {
            let col = artificial_offset + art_idx;
            art_idx += 1;
            t.rows[r][col] = 1.0;
            t.basis[r] = col;
        } else {
            t.basis[r] = slack_col;
        }
    }

    // Phase one: maximize minus the artificial sum.
    if n_art > 0 {
        let mut c1 = vec![0.0; n_total];
        for col in artificial_offset..n_total {
            c1[col] = -1.0;
        }
        t.set_objective(&c1);
        match t.iterate(true)? {
            LpStatus::Optimal => {}
            LpStatus::Unbounded => unreachable!("phase one is bounded by zero"),
        }
        let infeasibility = -t.obj[n_total];
        if infeasibility > FEAS_EPS {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive leftover artificial basics out where a real pivot exists;
        // rows without one are redundant and stay inert at zero.
        for r in 0..m {
            if t.basis[r] >= artificial_offset {
                if let Some(col) = (0..artificial_offset)
                    .find(|&c| t.rows[r][c].abs() > PIVOT_EPS)
                {
                    t.pivot(r, col);
                }
            }
        }
    }

    // Phase two on the real objective.
    let mut c2 = vec![0.0; n_total];
    c2[..n].copy_from_slice(&lp.objective);
    t.set_objective(&c2);
    let status = t.iterate(false)?;

    let mut x = lb.clone();
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] += t.rows[r][n_total];
        }
    }
    match status {
        LpStatus::Unbounded => return Ok(LpOutcome::Unbounded),
        LpStatus::Optimal => {}
    }

    // Substitution check against the original (unscaled) program.
    let mut worst: f64 = 0.0;
    for (coeffs, rhs) in &lp.ineq {
        worst = worst.max(dot(coeffs, &x) - rhs);
    }
    for (coeffs, rhs) in &lp.eq {
        worst = worst.max((dot(coeffs, &x) - rhs).abs());
    }
    for (v, l) in x.iter().zip(lb) {
        worst = worst.max(l - v);
    }
    let scale = 1.0
        + lp.ineq
            .iter()
            .chain(lp.eq.iter())
            .fold(0.0_f64, |a, (_, rhs)| a.max(rhs.abs()));
    if worst > FEAS_EPS * scale.max(1.0) * 10.0 {
        return Err(LpError::Unstable(worst));
    }

    let value = dot(&lp.objective, &x);
    Ok(LpOutcome::Optimal { value, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(lp: &LinearProgram) -> (f64, Vec<f64>) {
        match solve_lp(lp).unwrap() {
            LpOutcome::Optimal { value, x } => (value, x),
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn single_variable_box() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.less_equal(vec![1.0], 1.0);
        let (value, x) = optimal(&lp);
        assert!((value - 1.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_optimum_value_only() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.less_equal(vec![1.0, 1.0], 1.0);
        let (value, x) = optimal(&lp);
        assert!((value - 1.0).abs() < 1e-9);
        assert!((x[0] + x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_greater_equal_rows() {
        // max x + 2y s.t. x + y = 1, y >= 0.25, x >= 0.
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.equal(vec![1.0, 1.0], 1.0);
        lp.greater_equal(vec![0.0, 1.0], 0.25);
        let (value, x) = optimal(&lp);
        assert!((value - 2.0).abs() < 1e-9);
        assert!((x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.less_equal(vec![1.0], 1.0);
        lp.greater_equal(vec![1.0], 2.0);
        assert_eq!(solve_lp(&lp).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let lp = LinearProgram::new(vec![1.0, 0.0]);
        assert_eq!(solve_lp(&lp).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn lower_bounds_shift() {
        // max -x s.t. x >= 2 via bounds.
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.lower_bounds = vec![2.0];
        lp.less_equal(vec![1.0], 5.0);
        let (value, x) = optimal(&lp);
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((value + 2.0).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_inequality() {
        // max -x - y s.t. x + y >= 0.5 (stored as -x - y <= -0.5).
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.greater_equal(vec![1.0, 1.0], 0.5);
        let (value, _) = optimal(&lp);
        assert!((value + 0.5).abs() < 1e-9);
    }

    #[test]
    fn substitution_check_holds_on_random_programs() {
        // Deterministic pseudo-random feasible programs; optimum must pass
        // the substitution check and respect every row.
        let mut state = 0x9e3779b97f4a7c15_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..50 {
            let n = 4;
            let mut lp = LinearProgram::new((0..n).map(|_| next() - 0.3).collect());
            for _ in 0..5 {
                let coeffs: Vec<f64> = (0..n).map(|_| next()).collect();
                let rhs = next() + 0.1;
                lp.less_equal(coeffs, rhs);
            }
            // x = 0 is always feasible here, so the LP cannot be infeasible.
            match solve_lp(&lp).unwrap() {
                LpOutcome::Optimal { value, x } => {
                    for (coeffs, rhs) in &lp.ineq {
                        assert!(dot(coeffs, &x) <= rhs + 1e-7);
                    }
                    assert!(value >= -1e-9);
                }
                LpOutcome::Unbounded => {}
                LpOutcome::Infeasible => panic!("feasible program reported infeasible"),
            }
        }
    }
}
