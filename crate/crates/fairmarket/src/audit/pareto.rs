//! Pareto gap audits.
//!
//! The buyer Pareto gap is the largest gain in total bundle value
//! achievable while holding every buyer at or above its baseline bundle
//! value and respecting supply. The buyer-item variant additionally keeps a
//! protected aggregate exposure at or above its baseline level. A positive
//! gap comes with the improving allocation as a certificate. Leftover money
//! and seller revenue are deliberately outside the objective: the audit
//! reallocates items only.

use thiserror::Error;

use crate::market::Market;
use crate::mat::{dot, Mat};

use super::lp::{solve_lp, LinearProgram, LpError, LpOutcome};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("baseline allocation has wrong shape: expected {expected_rows}x{expected_cols}")]
    BadShape {
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("gap program unexpectedly infeasible or unbounded")]
    Degenerate,
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParetoVariant {
    BuyerOnly,
    BuyerItem,
}

#[derive(Clone, Debug)]
pub struct ParetoGapReport {
    pub gap: f64,
    /// Improving allocation when the gap is meaningfully positive.
    pub certificate: Option<Mat>,
    pub variant: ParetoVariant,
}

const CERT_TOL: f64 = 1e-9;

/// Largest welfare improvement with every buyer held at its baseline
/// bundle value.
pub fn buyer_pareto_gap(
    market: &Market,
    baseline_x: &Mat,
) -> Result<ParetoGapReport, AuditError> {
    gap_program(market, baseline_x, None)
}

/// Same program plus a floor on the aggregate exposure of `buyer_set` to
/// `item_set` at its baseline level. An empty buyer set reduces to the
/// buyer-only gap.
pub fn buyer_item_pareto_gap(
    market: &Market,
    baseline_x: &Mat,
    buyer_set: &[usize],
    item_set: &[usize],
) -> Result<ParetoGapReport, AuditError> {
    for &i in buyer_set {
        if i >= market.n_buyers() {
            return Err(AuditError::IndexOutOfRange(i));
        }
    }
    for &j in item_set {
        if j >= market.m_items() {
            return Err(AuditError::IndexOutOfRange(j));
        }
    }
    gap_program(market, baseline_x, Some((buyer_set, item_set)))
}

fn gap_program(
    market: &Market,
    baseline_x: &Mat,
    protected: Option<(&[usize], &[usize])>,
) -> Result<ParetoGapReport, AuditError> {
    let n = market.n_buyers();
    let m = market.m_items();
    if baseline_x.rows() != n || baseline_x.cols() != m {
        return Err(AuditError::BadShape {
            expected_rows: n,
            expected_cols: m,
        });
    }

    let nm = n * m;
    let mut objective = vec![0.0; nm];
    for i in 0..n {
        for j in 0..m {
            objective[i * m + j] = market.valuations().get(i, j);
        }
    }
    let baseline_welfare: f64 = (0..n)
        .map(|i| dot(market.valuation_row(i), baseline_x.row(i)))
        .sum();

    let mut lp = LinearProgram::new(objective);
    for j in 0..m {
        let mut row = vec![0.0; nm];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        lp.less_equal(row, market.supplies()[j]);
    }
    for i in 0..n {
        let mut row = vec![0.0; nm];
        for j in 0..m {
            row[i * m + j] = market.valuations().get(i, j);
        }
        let floor = dot(market.valuation_row(i), baseline_x.row(i));
        lp.greater_equal(row, floor);
    }
    let variant = match protected {
        Some((buyers, items)) if !buyers.is_empty() && !items.is_empty() => {
            let mut row = vec![0.0; nm];
            let mut floor = 0.0;
            for &i in buyers {
                for &j in items {
                    row[i * m + j] = 1.0;
                    floor += baseline_x.get(i, j);
                }
            }
            lp.greater_equal(row, floor);
            ParetoVariant::BuyerItem
        }
        Some(_) => ParetoVariant::BuyerItem,
        None => ParetoVariant::BuyerOnly,
    };

    // The baseline itself is feasible, so the program cannot be infeasible
    // and the supply caps keep it bounded.
    let (value, solution) = match solve_lp(&lp)? {
        LpOutcome::Optimal { value, x } => (value, x),
        _ => return Err(AuditError::Degenerate),
    };
    let gap = (value - baseline_welfare).max(0.0);
    let certificate = if gap > CERT_TOL {
        let mut x = Mat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                x.set(i, j, solution[i * m + j]);
            }
        }
        Some(x)
    } else {
        None
    };
    Ok(ParetoGapReport {
        gap,
        certificate,
        variant,
    })
}
