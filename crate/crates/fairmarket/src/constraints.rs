//! Sparse linear constraints over the allocation matrix, builders for the
//! three fairness families (per-buyer parity, per-item parity, aggregate
//! exposure floors), and the map from constraint multipliers to per-buyer
//! price interventions.
//!
//! Inequality rows use the `A1 x <= b1` convention throughout; builders
//! normalize signs so the projection `max{0, .}` in the online loop applies
//! uniformly.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::market::Market;
use crate::mat::Mat;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("buyer and item groups must be disjoint; index {0} appears in both")]
    OverlappingGroups(usize),
    #[error("constrained set must not be empty")]
    EmptySet,
    #[error("alpha must be strictly positive (got {0})")]
    BadAlpha(f64),
    #[error("index {index} out of range for {what} (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error(
        "exposure floor {floor} exceeds the available protected supply {available}"
    )]
    InfeasibleFloor { floor: f64, available: f64 },
    #[error("duplicate coefficient for constraint {row} at buyer {buyer}, item {item}")]
    DuplicateTerm {
        row: usize,
        buyer: usize,
        item: usize,
    },
    #[error("constraint row {0} has no nonzero coefficient")]
    EmptyRow(usize),
    #[error("multiplier vector length {got} does not match constraint count {expected}")]
    MultiplierLength { expected: usize, got: usize },
    #[error("inequality multiplier {index} is negative ({value})")]
    NegativeMultiplier { index: usize, value: f64 },
}

/// One sparse coefficient: constraint `row` gets `coef * x[buyer][item]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub row: usize,
    pub buyer: usize,
    pub item: usize,
    pub coef: f64,
}

/// Sparse inequality (`A1 x <= b1`) and equality (`A2 x = b2`) operators
/// over an `n x m` allocation matrix.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinearConstraintSet {
    n_buyers: usize,
    m_items: usize,
    ineq_terms: Vec<Term>,
    ineq_rhs: Vec<f64>,
    ineq_labels: Vec<String>,
    eq_terms: Vec<Term>,
    eq_rhs: Vec<f64>,
    eq_labels: Vec<String>,
}

impl LinearConstraintSet {
    pub fn empty(n_buyers: usize, m_items: usize) -> Self {
        Self {
            n_buyers,
            m_items,
            ..Default::default()
        }
    }

    pub fn n_buyers(&self) -> usize {
        self.n_buyers
    }

    pub fn m_items(&self) -> usize {
        self.m_items
    }

    /// Number of inequality rows (`K1`).
    pub fn n_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    /// Number of equality rows (`K2`).
    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_ineq() == 0 && self.n_eq() == 0
    }

    pub fn ineq_terms(&self) -> &[Term] {
        &self.ineq_terms
    }

    pub fn eq_terms(&self) -> &[Term] {
        &self.eq_terms
    }

    pub fn ineq_rhs(&self) -> &[f64] {
        &self.ineq_rhs
    }

    pub fn eq_rhs(&self) -> &[f64] {
        &self.eq_rhs
    }

    pub fn ineq_labels(&self) -> &[String] {
        &self.ineq_labels
    }

    pub fn eq_labels(&self) -> &[String] {
        &self.eq_labels
    }

    /// Appends an inequality row `sum coef * x_ij <= rhs`.
    pub fn push_ineq(
        &mut self,
        terms: &[(usize, usize, f64)],
        rhs: f64,
        label: impl Into<String>,
    ) -> Result<(), ConstraintError> {
        let row = self.n_ineq();
        let terms = self.check_row(row, terms)?;
        self.ineq_terms.extend(terms);
        self.ineq_rhs.push(rhs);
        self.ineq_labels.push(label.into());
        Ok(())
    }

    /// Appends an equality row `sum coef * x_ij = rhs`.
    pub fn push_eq(
        &mut self,
        terms: &[(usize, usize, f64)],
        rhs: f64,
        label: impl Into<String>,
    ) -> Result<(), ConstraintError> {
        let row = self.n_eq();
        let terms = self.check_row(row, terms)?;
        self.eq_terms.extend(terms);
        self.eq_rhs.push(rhs);
        self.eq_labels.push(label.into());
        Ok(())
    }

    fn check_row(
        &self,
        row: usize,
        terms: &[(usize, usize, f64)],
    ) -> Result<Vec<Term>, ConstraintError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(terms.len());
        let mut any_nonzero = false;
        for &(buyer, item, coef) in terms {
            if buyer >= self.n_buyers {
                return Err(ConstraintError::IndexOutOfRange {
                    what: "buyer",
                    index: buyer,
                    size: self.n_buyers,
                });
            }
            if item >= self.m_items {
                return Err(ConstraintError::IndexOutOfRange {
                    what: "item",
                    index: item,
                    size: self.m_items,
                });
            }
            if !seen.insert((buyer, item)) {
                return Err(ConstraintError::DuplicateTerm { row, buyer, item });
            }
            any_nonzero |= coef != 0.0;
            out.push(Term {
                row,
                buyer,
                item,
                coef,
            });
        }
        if !any_nonzero {
            return Err(ConstraintError::EmptyRow(row));
        }
        Ok(out)
    }

    /// Pairs of rows with identical support. Such rows are redundant for the
    /// dual and the online loop assumes they were eliminated, so callers
    /// surface these as warnings.
    pub fn redundancy_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        let supports = |terms: &[Term], k: usize| -> BTreeSet<(usize, usize)> {
            terms
                .iter()
                .filter(|t| t.row == k && t.coef != 0.0)
                .map(|t| (t.buyer, t.item))
                .collect()
        };
        let mut all: Vec<(String, BTreeSet<(usize, usize)>)> = Vec::new();
        for k in 0..self.n_ineq() {
            all.push((self.ineq_labels[k].clone(), supports(&self.ineq_terms, k)));
        }
        for k in 0..self.n_eq() {
            all.push((self.eq_labels[k].clone(), supports(&self.eq_terms, k)));
        }
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                if all[a].1 == all[b].1 {
                    warnings.push(format!(
                        "constraints '{}' and '{}' have identical support; drop one if they are redundant",
                        all[a].0, all[b].0
                    ));
                }
            }
        }
        warnings
    }

    /// Concatenates two constraint sets over the same market shape.
    pub fn merge(&mut self, other: &LinearConstraintSet) {
        assert_eq!(self.n_buyers, other.n_buyers);
        assert_eq!(self.m_items, other.m_items);
        let k1 = self.n_ineq();
        let k2 = self.n_eq();
        self.ineq_terms.extend(other.ineq_terms.iter().map(|t| Term {
            row: t.row + k1,
            ..*t
        }));
        self.ineq_rhs.extend_from_slice(&other.ineq_rhs);
        self.ineq_labels.extend_from_slice(&other.ineq_labels);
        self.eq_terms.extend(other.eq_terms.iter().map(|t| Term {
            row: t.row + k2,
            ..*t
        }));
        self.eq_rhs.extend_from_slice(&other.eq_rhs);
        self.eq_labels.extend_from_slice(&other.eq_labels);
    }
}

/// Multipliers on the inequality (`>= 0`) and equality (free sign) rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(cs: &LinearConstraintSet) -> Self {
        Self {
            ineq: vec![0.0; cs.n_ineq()],
            eq: vec![0.0; cs.n_eq()],
        }
    }
}

/// Residuals `A1 x - b1` and `A2 x - b2` with the worst violation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintResidual {
    /// Signed `A1 x - b1`; only positive values are violations.
    pub ineq: Vec<f64>,
    /// Signed `A2 x - b2`.
    pub eq: Vec<f64>,
    pub max_violation: f64,
}

/// Evaluates both operators at an allocation matrix.
pub fn evaluate_constraints(cs: &LinearConstraintSet, x: &Mat) -> ConstraintResidual {
    debug_assert_eq!(x.rows(), cs.n_buyers());
    debug_assert_eq!(x.cols(), cs.m_items());
    let mut ineq = vec![0.0; cs.n_ineq()];
    for t in &cs.ineq_terms {
        ineq[t.row] += t.coef * x.get(t.buyer, t.item);
    }
    for (r, b) in ineq.iter_mut().zip(&cs.ineq_rhs) {
        *r -= b;
    }
    let mut eq = vec![0.0; cs.n_eq()];
    for t in &cs.eq_terms {
        eq[t.row] += t.coef * x.get(t.buyer, t.item);
    }
    for (r, b) in eq.iter_mut().zip(&cs.eq_rhs) {
        *r -= b;
    }
    let mut max_violation = 0.0_f64;
    for r in &ineq {
        max_violation = max_violation.max(*r);
    }
    for r in &eq {
        max_violation = max_violation.max(r.abs());
    }
    ConstraintResidual {
        ineq,
        eq,
        max_violation,
    }
}

/// Passes multipliers through the constraint operators to get the dense
/// intervention matrix: `p_bar_ij = sum_k A1_kij l1_k + sum_k A2_kij l2_k`.
pub fn interventions_from_multipliers(
    cs: &LinearConstraintSet,
    mult: &Multipliers,
) -> Result<Mat, ConstraintError> {
    if mult.ineq.len() != cs.n_ineq() {
        return Err(ConstraintError::MultiplierLength {
            expected: cs.n_ineq(),
            got: mult.ineq.len(),
        });
    }
    if mult.eq.len() != cs.n_eq() {
        return Err(ConstraintError::MultiplierLength {
            expected: cs.n_eq(),
            got: mult.eq.len(),
        });
    }
    if let Some((k, &v)) = mult
        .ineq
        .iter()
        .enumerate()
        .find(|(_, v)| **v < 0.0)
    {
        return Err(ConstraintError::NegativeMultiplier { index: k, value: v });
    }
    let mut p_bar = Mat::zeros(cs.n_buyers(), cs.m_items());
    for t in &cs.ineq_terms {
        p_bar.add_to(t.buyer, t.item, t.coef * mult.ineq[t.row]);
    }
    for t in &cs.eq_terms {
        p_bar.add_to(t.buyer, t.item, t.coef * mult.eq[t.row]);
    }
    Ok(p_bar)
}

fn check_disjoint(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Result<(), ConstraintError> {
    if let Some(&ix) = a.intersection(b).next() {
        return Err(ConstraintError::OverlappingGroups(ix));
    }
    Ok(())
}

/// Parity weight that equalizes exposure between groups of different size.
pub fn equal_exposure_alpha(group_a_len: usize, group_b_len: usize) -> f64 {
    group_b_len as f64 / group_a_len as f64
}

/// Per-buyer parity: for each constrained buyer,
/// `sum_{j in A} x_ij = alpha * sum_{j in B} x_ij`.
pub fn build_pbp(
    market: &Market,
    constrained_buyers: &BTreeSet<usize>,
    item_group_a: &BTreeSet<usize>,
    item_group_b: &BTreeSet<usize>,
    alpha: f64,
) -> Result<LinearConstraintSet, ConstraintError> {
    if constrained_buyers.is_empty() {
        return Err(ConstraintError::EmptySet);
    }
    if !(alpha > 0.0) {
        return Err(ConstraintError::BadAlpha(alpha));
    }
    check_disjoint(item_group_a, item_group_b)?;
    let mut cs = LinearConstraintSet::empty(market.n_buyers(), market.m_items());
    for &i in constrained_buyers {
        let mut terms = Vec::new();
        for &j in item_group_a {
            terms.push((i, j, 1.0));
        }
        for &j in item_group_b {
            terms.push((i, j, -alpha));
        }
        cs.push_eq(&terms, 0.0, format!("pbp_buyer_{i}"))?;
    }
    Ok(cs)
}

/// Per-item parity: for each constrained item,
/// `sum_{i in A} x_ij = alpha * sum_{i in B} x_ij`.
pub fn build_pip(
    market: &Market,
    constrained_items: &BTreeSet<usize>,
    buyer_group_a: &BTreeSet<usize>,
    buyer_group_b: &BTreeSet<usize>,
    alpha: f64,
) -> Result<LinearConstraintSet, ConstraintError> {
    if !(alpha > 0.0) {
        return Err(ConstraintError::BadAlpha(alpha));
    }
    check_disjoint(buyer_group_a, buyer_group_b)?;
    let mut cs = LinearConstraintSet::empty(market.n_buyers(), market.m_items());
    // An empty constrained item set is a valid no-op.
    for &j in constrained_items {
        if buyer_group_a.is_empty() && buyer_group_b.is_empty() {
            return Err(ConstraintError::EmptySet);
        }
        let mut terms = Vec::new();
        for &i in buyer_group_a {
            terms.push((i, j, 1.0));
        }
        for &i in buyer_group_b {
            terms.push((i, j, -alpha));
        }
        cs.push_eq(&terms, 0.0, format!("pip_item_{j}"))?;
    }
    Ok(cs)
}

/// Aggregate exposure floor: `sum_{i in C, j in P} x_ij >= floor`, stored in
/// the `<=` convention as a single negated row.
pub fn build_aef(
    market: &Market,
    constrained_buyers: &BTreeSet<usize>,
    protected_items: &BTreeSet<usize>,
    floor: f64,
) -> Result<LinearConstraintSet, ConstraintError> {
    if constrained_buyers.is_empty() || protected_items.is_empty() {
        return Err(ConstraintError::EmptySet);
    }
    let available: f64 = protected_items
        .iter()
        .map(|&j| {
            market
                .supplies()
                .get(j)
                .copied()
                .unwrap_or(0.0)
        })
        .sum();
    if floor > available {
        return Err(ConstraintError::InfeasibleFloor { floor, available });
    }
    let mut cs = LinearConstraintSet::empty(market.n_buyers(), market.m_items());
    let mut terms = Vec::new();
    for &i in constrained_buyers {
        for &j in protected_items {
            terms.push((i, j, -1.0));
        }
    }
    cs.push_ineq(&terms, -floor, "aef_floor")?;
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Market;

    fn set(ix: &[usize]) -> BTreeSet<usize> {
        ix.iter().copied().collect()
    }

    fn parity_market() -> Market {
        let v = Mat::from_rows(&[
            vec![1.5, 0.4],
            vec![0.4, 1.5],
            vec![5.0, 2.0],
            vec![2.0, 5.0],
        ]);
        Market::new(vec![1.0; 4], v).unwrap()
    }

    #[test]
    fn pbp_rows_one_per_buyer() {
        let market = parity_market();
        let cs = build_pbp(&market, &set(&[0, 1]), &set(&[0]), &set(&[1]), 1.0).unwrap();
        assert_eq!(cs.n_eq(), 2);
        assert_eq!(cs.n_ineq(), 0);
        let row0: Vec<_> = cs.eq_terms().iter().filter(|t| t.row == 0).collect();
        assert_eq!(row0.len(), 2);
        assert_eq!((row0[0].buyer, row0[0].item, row0[0].coef), (0, 0, 1.0));
        assert_eq!((row0[1].buyer, row0[1].item, row0[1].coef), (0, 1, -1.0));
        assert_eq!(cs.eq_rhs(), &[0.0, 0.0]);
    }

    #[test]
    fn pbp_rejects_overlapping_groups() {
        let market = parity_market();
        let err = build_pbp(&market, &set(&[0]), &set(&[0]), &set(&[0]), 1.0);
        assert!(matches!(err, Err(ConstraintError::OverlappingGroups(0))));
        let err = build_pbp(&market, &set(&[]), &set(&[0]), &set(&[1]), 1.0);
        assert!(matches!(err, Err(ConstraintError::EmptySet)));
    }

    #[test]
    fn pbp_single_buyer_alpha_two() {
        let market = parity_market();
        let cs = build_pbp(&market, &set(&[2]), &set(&[0]), &set(&[1]), 2.0).unwrap();
        assert_eq!(cs.n_eq(), 1);
        let terms: Vec<_> = cs.eq_terms().iter().map(|t| (t.buyer, t.item, t.coef)).collect();
        assert_eq!(terms, vec![(2, 0, 1.0), (2, 1, -2.0)]);
    }

    #[test]
    fn pip_row_per_item() {
        let market = parity_market();
        let cs = build_pip(&market, &set(&[0]), &set(&[0, 1]), &set(&[2, 3]), 1.0).unwrap();
        assert_eq!(cs.n_eq(), 1);
        assert_eq!(cs.eq_terms().len(), 4);

        // Two-buyer variant.
        let v = Mat::from_rows(&[vec![2.0, 2.0], vec![0.1, 3.0]]);
        let m2 = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_pip(&m2, &set(&[0]), &set(&[0]), &set(&[1]), 1.0).unwrap();
        let terms: Vec<_> = cs.eq_terms().iter().map(|t| (t.buyer, t.item, t.coef)).collect();
        assert_eq!(terms, vec![(0, 0, 1.0), (1, 0, -1.0)]);

        // Empty constrained item set is a valid no-op.
        let cs = build_pip(&market, &set(&[]), &set(&[0]), &set(&[1]), 1.0).unwrap();
        assert!(cs.is_empty());
    }

    #[test]
    fn aef_row_and_feasibility() {
        let v = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_aef(&market, &set(&[0]), &set(&[0]), 0.5).unwrap();
        assert_eq!(cs.n_ineq(), 1);
        let terms: Vec<_> = cs.ineq_terms().iter().map(|t| (t.buyer, t.item, t.coef)).collect();
        assert_eq!(terms, vec![(0, 0, -1.0)]);
        assert_eq!(cs.ineq_rhs(), &[-0.5]);

        // Zero floor is vacuous but representable.
        assert!(build_aef(&market, &set(&[0]), &set(&[0]), 0.0).is_ok());
        // A floor above total protected supply cannot be met.
        assert!(matches!(
            build_aef(&market, &set(&[0]), &set(&[0]), 1.5),
            Err(ConstraintError::InfeasibleFloor { .. })
        ));
    }

    #[test]
    fn evaluate_parity_residuals() {
        let market = parity_market();
        let cs = build_pbp(&market, &set(&[0, 1]), &set(&[0]), &set(&[1]), 1.0).unwrap();
        let third = 1.0 / 3.0;
        let x_eg = Mat::from_rows(&[
            vec![third, 0.0],
            vec![0.0, third],
            vec![2.0 * third, 0.0],
            vec![0.0, 2.0 * third],
        ]);
        let r = evaluate_constraints(&cs, &x_eg);
        assert!((r.eq[0] - third).abs() < 1e-12);
        assert!((r.eq[1] + third).abs() < 1e-12);
        assert!((r.max_violation - third).abs() < 1e-12);

        // The exit allocation satisfies both rows exactly.
        let x_exit = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let r = evaluate_constraints(&cs, &x_exit);
        assert_eq!(r.eq, vec![0.0, 0.0]);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn evaluate_aef_boundary() {
        let v = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_aef(&market, &set(&[0]), &set(&[0]), 0.5).unwrap();
        let mut x = Mat::zeros(2, 2);
        x.set(0, 0, 0.5);
        let r = evaluate_constraints(&cs, &x);
        assert_eq!(r.ineq, vec![0.0]);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn interventions_match_constraint_structure() {
        let market = parity_market();
        // Parity row for buyer 0 at multiplier 0.2: tax on A, subsidy on B.
        let cs = build_pbp(&market, &set(&[0]), &set(&[0]), &set(&[1]), 1.0).unwrap();
        let mult = Multipliers {
            ineq: vec![],
            eq: vec![0.2],
        };
        let p_bar = interventions_from_multipliers(&cs, &mult).unwrap();
        assert!((p_bar.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((p_bar.get(0, 1) + 0.2).abs() < 1e-15);
        for i in 1..4 {
            assert_eq!(p_bar.row(i), &[0.0, 0.0]);
        }

        // Floor row carries coefficient -1, so its multiplier is a subsidy.
        let v = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let m2 = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_aef(&m2, &set(&[0]), &set(&[0]), 0.5).unwrap();
        let mult = Multipliers {
            ineq: vec![0.3],
            eq: vec![],
        };
        let p_bar = interventions_from_multipliers(&cs, &mult).unwrap();
        assert!((p_bar.get(0, 0) + 0.3).abs() < 1e-15);
        assert_eq!(p_bar.get(0, 1), 0.0);
        assert_eq!(p_bar.row(1), &[0.0, 0.0]);

        // All-zero multipliers give the zero matrix.
        let zero = interventions_from_multipliers(&cs, &Multipliers::zeros(&cs)).unwrap();
        assert!(zero.iter().all(|v| v == 0.0));

        // Negative inequality multipliers are rejected.
        let bad = Multipliers {
            ineq: vec![-0.1],
            eq: vec![],
        };
        assert!(matches!(
            interventions_from_multipliers(&cs, &bad),
            Err(ConstraintError::NegativeMultiplier { .. })
        ));
    }

    #[test]
    fn duplicate_terms_rejected() {
        let mut cs = LinearConstraintSet::empty(2, 2);
        let err = cs.push_eq(&[(0, 0, 1.0), (0, 0, 2.0)], 0.0, "dup");
        assert!(matches!(err, Err(ConstraintError::DuplicateTerm { .. })));
        let err = cs.push_ineq(&[(0, 0, 0.0)], 0.0, "zero");
        assert!(matches!(err, Err(ConstraintError::EmptyRow(_))));
    }

    #[test]
    fn identical_support_warning() {
        let mut cs = LinearConstraintSet::empty(2, 2);
        cs.push_eq(&[(0, 0, 1.0), (0, 1, -1.0)], 0.0, "first").unwrap();
        cs.push_eq(&[(0, 0, 2.0), (0, 1, -2.0)], 0.0, "second").unwrap();
        let warnings = cs.redundancy_warnings();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("first"));
    }
}
