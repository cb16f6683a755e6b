//! Built-in reference markets with hand-checkable equilibria.
//!
//! Six small markets, ids `t1` through `t6`, each paired with a fairness
//! constraint whose consequences can be verified by hand: parity
//! constraints that push buyers out of the market entirely (t1), crowding
//! effects where the intervention hurts the buyers it targets (t2, t4),
//! uniform losses (t5), and floor constraints that are efficient for the
//! protected exposure but not for buyers alone (t3, t6). The repro suite
//! solves each market with and without its constraint and asserts prices,
//! utilities, allocations, and the qualitative story, one line per
//! assertion.

use std::collections::BTreeSet;
use std::io::Write;

use crate::audit::{
    budget_adjusted_envy, buyer_item_pareto_gap, buyer_pareto_gap, exposure, welfare_delta,
};
use crate::constraints::{build_aef, build_pbp, build_pip, LinearConstraintSet};
use crate::market::Market;
use crate::mat::Mat;
use crate::solver::{solve_constrained_eg, solve_offset_eg, SolveError, SolverConfig};

/// Assertion tolerance matched to two-digit reference values.
pub const CASE_TOL: f64 = 2e-2;

fn market(budgets: Vec<f64>, rows: &[Vec<f64>], buyers: &[&str], items: &[&str]) -> Market {
    Market::new(budgets, Mat::from_rows(rows))
        .and_then(|m| {
            m.with_groups(
                Some(buyers.iter().map(|s| s.to_string()).collect()),
                Some(items.iter().map(|s| s.to_string()).collect()),
            )
        })
        .expect("reference market is well formed")
}

/// Two parity-constrained buyers with mild preferences and two
/// unconstrained buyers with strong ones.
pub fn market_t1() -> Market {
    market(
        vec![1.0; 4],
        &[
            vec![1.5, 0.4],
            vec![0.4, 1.5],
            vec![5.0, 2.0],
            vec![2.0, 5.0],
        ],
        &["C", "C", "U", "U"],
        &["A", "B"],
    )
}

pub fn constraint_t1(m: &Market) -> LinearConstraintSet {
    build_pbp(
        m,
        &BTreeSet::from([0, 1]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1]),
        1.0,
    )
    .expect("t1 parity rows")
}

/// Everyone prefers the first item; the first buyer group starts
/// disadvantaged on it.
pub fn market_t2() -> Market {
    market(
        vec![1.0; 4],
        &[
            vec![2.0, 1.0],
            vec![2.0, 1.5],
            vec![3.0, 2.0],
            vec![3.0, 2.0],
        ],
        &["A", "A", "B", "B"],
        &["C", "U"],
    )
}

pub fn constraint_t2_pip(m: &Market) -> LinearConstraintSet {
    build_pip(
        m,
        &BTreeSet::from([0]),
        &BTreeSet::from([0, 1]),
        &BTreeSet::from([2, 3]),
        1.0,
    )
    .expect("t2 item parity row")
}

pub fn constraint_t2_aef(m: &Market) -> LinearConstraintSet {
    build_aef(m, &BTreeSet::from([0, 1]), &BTreeSet::from([0]), 0.5).expect("t2 floor row")
}

/// Parity forces an equal split that wastes the first item on a buyer who
/// cannot use it.
pub fn market_t3() -> Market {
    market(
        vec![1.0; 2],
        &[vec![2.0, 2.0], vec![0.0, 2.0]],
        &["C", "U"],
        &["A", "B"],
    )
}

pub fn constraint_t3(m: &Market) -> LinearConstraintSet {
    build_pbp(
        m,
        &BTreeSet::from([0]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1]),
        1.0,
    )
    .expect("t3 parity row")
}

/// Item parity between two very different buyers leaves both worse off.
pub fn market_t4() -> Market {
    market(
        vec![1.0; 2],
        &[vec![2.0, 2.0], vec![0.1, 3.0]],
        &["A", "B"],
        &["C", "U"],
    )
}

pub fn constraint_t4(m: &Market) -> LinearConstraintSet {
    build_pip(
        m,
        &BTreeSet::from([0]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1]),
        1.0,
    )
    .expect("t4 item parity row")
}

/// Symmetric opposed preferences; parity on one buyer hurts both.
pub fn market_t5() -> Market {
    market(
        vec![1.0; 2],
        &[vec![2.0, 1.0], vec![1.0, 2.0]],
        &["C", "U"],
        &["A", "B"],
    )
}

pub fn constraint_t5(m: &Market) -> LinearConstraintSet {
    build_pbp(
        m,
        &BTreeSet::from([0]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1]),
        1.0,
    )
    .expect("t5 parity row")
}

/// An exposure floor forcing a buyer to hold an item it does not value.
pub fn market_t6() -> Market {
    market(
        vec![1.0; 2],
        &[vec![0.0, 2.0], vec![2.0, 0.0]],
        &["A", "B"],
        &["C", "U"],
    )
}

pub fn constraint_t6(m: &Market) -> LinearConstraintSet {
    build_aef(m, &BTreeSet::from([0]), &BTreeSet::from([0]), 0.5).expect("t6 floor row")
}

#[derive(Clone, Debug)]
pub struct Assertion {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct ReproReport {
    pub assertions: Vec<Assertion>,
}

impl ReproReport {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }

    pub fn write_text(&self, out: &mut impl Write) -> std::io::Result<()> {
        for a in &self.assertions {
            writeln!(
                out,
                "{} {:<40} {}",
                if a.passed { "PASS" } else { "FAIL" },
                a.id,
                a.detail
            )?;
        }
        let failed = self.failures().len();
        writeln!(
            out,
            "{} assertions, {} failed",
            self.assertions.len(),
            failed
        )
    }

    fn close(&mut self, id: &str, actual: f64, expected: f64, tol: f64) {
        self.assertions.push(Assertion {
            id: id.to_string(),
            passed: (actual - expected).abs() <= tol,
            detail: format!("actual {actual:.4}, expected {expected:.4} (tol {tol:.0e})"),
        });
    }

    fn holds(&mut self, id: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            id: id.to_string(),
            passed,
            detail,
        });
    }
}

fn close_vec(report: &mut ReproReport, id: &str, actual: &[f64], expected: &[f64], tol: f64) {
    for (k, (a, e)) in actual.iter().zip(expected).enumerate() {
        report.close(&format!("{id}.{k}"), *a, *e, tol);
    }
}

/// Solves every reference market with and without its constraint and
/// asserts the known values and the qualitative effects.
pub fn run_repro_suite() -> Result<ReproReport, SolveError> {
    let config = SolverConfig::default();
    let mut rep = ReproReport::default();

    // t1: unconstrained prices and utilities, then the parity exit.
    let m1 = market_t1();
    let zero = Mat::zeros(4, 2);
    let base = solve_offset_eg(&m1, &zero, &config)?;
    close_vec(&mut rep, "t1.eg.price", &base.prices.base, &[1.5, 1.5], CASE_TOL);
    close_vec(
        &mut rep,
        "t1.eg.u",
        &base.utilities(&m1),
        &[1.0, 1.0, 10.0 / 3.0, 10.0 / 3.0],
        CASE_TOL,
    );
    let cs1 = constraint_t1(&m1);
    let con = solve_constrained_eg(&m1, &cs1, &config)?;
    close_vec(&mut rep, "t1.pbp.u", &con.utilities(&m1), &[1.0, 1.0, 5.0, 5.0], CASE_TOL);
    close_vec(&mut rep, "t1.pbp.price", &con.prices.base, &[1.0, 1.0], CASE_TOL);
    let c_purchases = exposure(&con.alloc.x, &[0, 1], &[0, 1]);
    rep.holds(
        "t1.pbp.exit",
        c_purchases <= CASE_TOL,
        format!("constrained buyers hold {c_purchases:.4} items"),
    );
    let exp_before = exposure(&base.alloc.x, &[0, 1], &[0, 1]);
    rep.close("t1.eg.exposure", exp_before, 2.0 / 3.0, CASE_TOL);
    rep.holds(
        "t1.pbp.exposure_drop",
        exp_before > 0.5 && c_purchases < 1e-2,
        format!("exposure {exp_before:.3} -> {c_purchases:.3}"),
    );
    let delta = welfare_delta(&m1, &base, &con, &[0, 1]);
    rep.holds(
        "t1.pbp.unconstrained_gain",
        delta.other.mean > 1.0,
        format!("mean unconstrained delta {:.3}", delta.other.mean),
    );
    let envy = budget_adjusted_envy(&m1, &con.alloc, &[vec![0, 1], vec![2, 3]]);
    rep.holds(
        "t1.pbp.group_envy_free",
        envy.max_within_group <= 1e-4,
        format!("within-group envy {:.2e}", envy.max_within_group),
    );

    // t2: crowding out under item parity, and the equivalent floor.
    let m2 = market_t2();
    let base = solve_offset_eg(&m2, &Mat::zeros(4, 2), &config)?;
    close_vec(
        &mut rep,
        "t2.eg.u",
        &base.utilities(&m2),
        &[1.0, 1.125, 1.5, 1.5],
        CASE_TOL,
    );
    let pip = solve_constrained_eg(&m2, &constraint_t2_pip(&m2), &config)?;
    close_vec(
        &mut rep,
        "t2.pip.u",
        &pip.utilities(&m2),
        &[1.0, 1.0, 4.0 / 3.0, 4.0 / 3.0],
        CASE_TOL,
    );
    let aef = solve_constrained_eg(&m2, &constraint_t2_aef(&m2), &config)?;
    let pip_u = pip.utilities(&m2);
    let aef_u = aef.utilities(&m2);
    close_vec(&mut rep, "t2.aef_matches_pip.u", &aef_u, &pip_u, CASE_TOL);
    rep.holds(
        "t2.pip.second_buyer_worse",
        pip_u[1] < 1.125 - CASE_TOL,
        format!("buyer 1 utility {:.3} after parity", pip_u[1]),
    );

    // t3: parity split leaves gaps on the table in both senses.
    let m3 = market_t3();
    let con = solve_constrained_eg(&m3, &constraint_t3(&m3), &config)?;
    let buyer_gap = buyer_pareto_gap(&m3, &con.alloc.x)
        .map_err(|e| SolveError::Numeric(e.to_string()))?;
    let item_gap = buyer_item_pareto_gap(&m3, &con.alloc.x, &[0], &[1])
        .map_err(|e| SolveError::Numeric(e.to_string()))?;
    rep.holds(
        "t3.pbp.buyer_gap_positive",
        buyer_gap.gap > 0.1,
        format!("buyer gap {:.3}", buyer_gap.gap),
    );
    rep.holds(
        "t3.pbp.buyer_item_gap_positive",
        item_gap.gap > 0.1,
        format!("buyer-item gap {:.3}", item_gap.gap),
    );

    // t4: item parity makes both buyers worse off.
    let m4 = market_t4();
    let base = solve_offset_eg(&m4, &Mat::zeros(2, 2), &config)?;
    close_vec(&mut rep, "t4.eg.u", &base.utilities(&m4), &[2.0, 3.0], CASE_TOL);
    let con = solve_constrained_eg(&m4, &constraint_t4(&m4), &config)?;
    close_vec(&mut rep, "t4.pip.u", &con.utilities(&m4), &[1.52, 2.28], CASE_TOL);
    let delta = welfare_delta(&m4, &base, &con, &[0]);
    rep.holds(
        "t4.pip.everyone_worse",
        delta.per_buyer.iter().all(|d| *d < 0.0),
        format!("deltas {:?}", delta.per_buyer),
    );

    // t5: parity on one buyer, both lose.
    let m5 = market_t5();
    let base = solve_offset_eg(&m5, &Mat::zeros(2, 2), &config)?;
    let con = solve_constrained_eg(&m5, &constraint_t5(&m5), &config)?;
    close_vec(
        &mut rep,
        "t5.pbp.price",
        &con.prices.base,
        &[2.0 / 3.0, 4.0 / 3.0],
        CASE_TOL,
    );
    close_vec(&mut rep, "t5.pbp.u", &con.utilities(&m5), &[1.5, 1.5], CASE_TOL);
    let delta = welfare_delta(&m5, &base, &con, &[0]);
    rep.holds(
        "t5.pbp.everyone_worse",
        delta.per_buyer.iter().all(|d| *d < -CASE_TOL),
        format!("deltas {:?}", delta.per_buyer),
    );

    // t6: the floor is efficient for protected exposure, not for buyers.
    let m6 = market_t6();
    let con = solve_constrained_eg(&m6, &constraint_t6(&m6), &config)?;
    close_vec(&mut rep, "t6.aef.u", &con.utilities(&m6), &[2.0, 1.0], CASE_TOL);
    rep.holds(
        "t6.aef.floor_met",
        con.alloc.x.get(0, 0) >= 0.5 - 1e-6,
        format!("protected holding {:.4}", con.alloc.x.get(0, 0)),
    );
    let buyer_gap = buyer_pareto_gap(&m6, &con.alloc.x)
        .map_err(|e| SolveError::Numeric(e.to_string()))?;
    let item_gap = buyer_item_pareto_gap(&m6, &con.alloc.x, &[0], &[0])
        .map_err(|e| SolveError::Numeric(e.to_string()))?;
    rep.holds(
        "t6.aef.buyer_gap_positive",
        buyer_gap.gap > 0.1,
        format!("buyer gap {:.3}", buyer_gap.gap),
    );
    rep.holds(
        "t6.aef.buyer_item_gap_zero",
        item_gap.gap <= 1e-3,
        format!("buyer-item gap {:.2e}", item_gap.gap),
    );

    Ok(rep)
}
