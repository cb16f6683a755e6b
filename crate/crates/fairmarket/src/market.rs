//! Market domain types and the closed-form quasi-linear demand oracle.
//!
//! A market has `n` buyers with budgets and per-item linear valuations and
//! `m` divisible items with positive supplies. Buyers keep leftover budget,
//! so a buyer's utility for a bundle `x_i` with leftover `delta_i` is
//! `v_i . x_i + delta_i`.

use thiserror::Error;

use crate::mat::{dot, Mat};

/// Default relative tolerance for detecting bang-per-buck ties.
pub const TIE_TOL: f64 = 1e-7;
/// Default tolerance under which a price or value counts as zero.
pub const NUM_TOL: f64 = 1e-9;
/// Slack allowed when checking supply feasibility of an allocation.
pub const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("budget of buyer {buyer} must be strictly positive (got {value})")]
    NonPositiveBudget { buyer: usize, value: f64 },
    #[error("supply of item {item} must be strictly positive (got {value})")]
    NonPositiveSupply { item: usize, value: f64 },
    #[error("valuation of buyer {buyer} for item {item} is negative ({value})")]
    NegativeValuation {
        buyer: usize,
        item: usize,
        value: f64,
    },
    #[error("utility of buyer {buyer} is not strictly positive ({value}); log objective undefined")]
    NonPositiveUtility { buyer: usize, value: f64 },
    #[error("negative entry in {context} at buyer {buyer}, item {item}")]
    NegativeEntry {
        context: &'static str,
        buyer: usize,
        item: usize,
    },
    #[error("group labels must cover {expected} entries, got {got}")]
    BadGroupLabels { expected: usize, got: usize },
}

/// Tag for the utility family. Only linear utilities are implemented; the
/// tag keeps serialized markets forward compatible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UtilityKind {
    #[default]
    Linear,
}

/// Immutable market instance: budgets, valuations, supplies, group labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    budgets: Vec<f64>,
    valuations: Mat,
    supplies: Vec<f64>,
    buyer_groups: Option<Vec<String>>,
    item_groups: Option<Vec<String>>,
    utility_kind: UtilityKind,
    inert: Vec<bool>,
}

impl Market {
    /// Builds a market with unit supplies and no group labels.
    pub fn new(budgets: Vec<f64>, valuations: Mat) -> Result<Self, MarketError> {
        let m = valuations.cols();
        Self::with_supplies(budgets, valuations, vec![1.0; m])
    }

    pub fn with_supplies(
        budgets: Vec<f64>,
        valuations: Mat,
        supplies: Vec<f64>,
    ) -> Result<Self, MarketError> {
        if budgets.len() != valuations.rows() {
            return Err(MarketError::DimensionMismatch {
                context: "budgets vs valuation rows",
                expected: valuations.rows(),
                got: budgets.len(),
            });
        }
        if supplies.len() != valuations.cols() {
            return Err(MarketError::DimensionMismatch {
                context: "supplies vs valuation columns",
                expected: valuations.cols(),
                got: supplies.len(),
            });
        }
        for (i, &b) in budgets.iter().enumerate() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(MarketError::NonPositiveBudget { buyer: i, value: b });
            }
        }
        for (j, &s) in supplies.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(MarketError::NonPositiveSupply { item: j, value: s });
            }
        }
        let mut inert = Vec::with_capacity(valuations.rows());
        for i in 0..valuations.rows() {
            let mut any_positive = false;
            for j in 0..valuations.cols() {
                let v = valuations.get(i, j);
                if v < 0.0 || !v.is_finite() {
                    return Err(MarketError::NegativeValuation {
                        buyer: i,
                        item: j,
                        value: v,
                    });
                }
                any_positive |= v > 0.0;
            }
            // A buyer that values nothing stays in the market and keeps its
            // budget; constrained equilibria can push buyers there, so this
            // is a state, not an input error.
            inert.push(!any_positive);
        }
        Ok(Self {
            budgets,
            valuations,
            supplies,
            buyer_groups: None,
            item_groups: None,
            utility_kind: UtilityKind::Linear,
            inert,
        })
    }

    pub fn with_groups(
        mut self,
        buyer_groups: Option<Vec<String>>,
        item_groups: Option<Vec<String>>,
    ) -> Result<Self, MarketError> {
        if let Some(g) = &buyer_groups {
            if g.len() != self.n_buyers() {
                return Err(MarketError::BadGroupLabels {
                    expected: self.n_buyers(),
                    got: g.len(),
                });
            }
        }
        if let Some(g) = &item_groups {
            if g.len() != self.m_items() {
                return Err(MarketError::BadGroupLabels {
                    expected: self.m_items(),
                    got: g.len(),
                });
            }
        }
        self.buyer_groups = buyer_groups;
        self.item_groups = item_groups;
        Ok(self)
    }

    pub fn n_buyers(&self) -> usize {
        self.budgets.len()
    }

    pub fn m_items(&self) -> usize {
        self.supplies.len()
    }

    pub fn budget(&self, i: usize) -> f64 {
        self.budgets[i]
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn valuations(&self) -> &Mat {
        &self.valuations
    }

    pub fn valuation_row(&self, i: usize) -> &[f64] {
        self.valuations.row(i)
    }

    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    pub fn buyer_groups(&self) -> Option<&[String]> {
        self.buyer_groups.as_deref()
    }

    pub fn item_groups(&self) -> Option<&[String]> {
        self.item_groups.as_deref()
    }

    pub fn utility_kind(&self) -> UtilityKind {
        self.utility_kind
    }

    /// True when buyer `i` values no item; its equilibrium utility is its budget.
    pub fn is_inert(&self, i: usize) -> bool {
        self.inert[i]
    }

    /// Stable fingerprint of the market contents, for trace provenance.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.push_usize(self.n_buyers());
        h.push_usize(self.m_items());
        for &b in &self.budgets {
            h.push_f64(b);
        }
        for v in self.valuations.iter() {
            h.push_f64(v);
        }
        for &s in &self.supplies {
            h.push_f64(s);
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn push_byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn push_f64(&mut self, v: f64) {
        for b in v.to_bits().to_le_bytes() {
            self.push_byte(b);
        }
    }
    fn push_usize(&mut self, v: usize) {
        for b in (v as u64).to_le_bytes() {
            self.push_byte(b);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// An allocation matrix plus per-buyer leftover money.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub x: Mat,
    pub delta: Vec<f64>,
}

impl Allocation {
    pub fn zeros(n_buyers: usize, m_items: usize) -> Self {
        Self {
            x: Mat::zeros(n_buyers, m_items),
            delta: vec![0.0; n_buyers],
        }
    }

    pub fn new(x: Mat, delta: Vec<f64>) -> Result<Self, MarketError> {
        if delta.len() != x.rows() {
            return Err(MarketError::DimensionMismatch {
                context: "delta vs allocation rows",
                expected: x.rows(),
                got: delta.len(),
            });
        }
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                if x.get(i, j) < 0.0 {
                    return Err(MarketError::NegativeEntry {
                        context: "allocation",
                        buyer: i,
                        item: j,
                    });
                }
            }
        }
        if let Some(i) = delta.iter().position(|d| *d < 0.0) {
            return Err(MarketError::NegativeEntry {
                context: "leftover",
                buyer: i,
                item: 0,
            });
        }
        Ok(Self { x, delta })
    }

    /// Quasi-linear utility of buyer `i` under this allocation.
    pub fn utility(&self, market: &Market, i: usize) -> f64 {
        dot(market.valuation_row(i), self.x.row(i)) + self.delta[i]
    }

    pub fn utilities(&self, market: &Market) -> Vec<f64> {
        (0..market.n_buyers())
            .map(|i| self.utility(market, i))
            .collect()
    }

    /// Checks `sum_i x_ij <= s_j + FEAS_TOL` for every item.
    pub fn supply_feasible(&self, market: &Market) -> bool {
        (0..market.m_items()).all(|j| self.x.col_sum(j) <= market.supplies()[j] + FEAS_TOL)
    }
}

/// Base item prices plus the per-(buyer, item) intervention offsets.
/// Positive offsets are taxes, negative offsets are subsidies.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSystem {
    pub base: Vec<f64>,
    pub interventions: Mat,
}

impl PriceSystem {
    pub fn uniform(base: Vec<f64>, n_buyers: usize) -> Self {
        let m = base.len();
        Self {
            base,
            interventions: Mat::zeros(n_buyers, m),
        }
    }

    /// Effective price buyer `i` faces for item `j`.
    #[inline]
    pub fn effective(&self, i: usize, j: usize) -> f64 {
        self.base[j] + self.interventions.get(i, j)
    }

    pub fn effective_row(&self, i: usize) -> Vec<f64> {
        self.base
            .iter()
            .zip(self.interventions.row(i))
            .map(|(p, t)| p + t)
            .collect()
    }
}

/// What an optimizing quasi-linear buyer does at fixed effective prices.
#[derive(Clone, Debug, PartialEq)]
pub enum DemandResponse {
    Bounded(DemandBundle),
    /// Some item with positive value has effective price ~0 (or below), so
    /// demand has no maximizer. Signals an infeasible dual iterate.
    Unbounded { saturating_items: Vec<usize> },
}

/// Canonical demand-set description for one buyer.
///
/// `spend_items` is the set of maximal bang-per-buck items (within the tie
/// tolerance). When `bang_per_buck > 1` the buyer spends the whole budget
/// on them; below 1 the buyer keeps everything; at 1 any split between
/// spending and leftover is optimal and `indifferent` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandBundle {
    pub spend_items: Vec<usize>,
    pub spend_amount: f64,
    pub leftover: f64,
    pub bang_per_buck: f64,
    pub indifferent: bool,
}

impl DemandBundle {
    /// Best achievable utility at these prices: `B * max(r, 1)`.
    pub fn optimal_utility(&self, budget: f64) -> f64 {
        budget * self.bang_per_buck.max(1.0)
    }
}

/// Linear bundle value plus leftover: `v . x + delta`.
pub fn linear_utility(
    valuation_row: &[f64],
    bundle: &[f64],
    leftover: f64,
) -> Result<f64, MarketError> {
    if valuation_row.len() != bundle.len() {
        return Err(MarketError::DimensionMismatch {
            context: "valuation vs bundle",
            expected: valuation_row.len(),
            got: bundle.len(),
        });
    }
    Ok(dot(valuation_row, bundle) + leftover)
}

/// Closed-form demand of a linear quasi-linear buyer at the given effective
/// prices. Items with positive value and price at or below `NUM_TOL` make
/// demand unbounded and are reported instead of a bundle.
pub fn demand_response(
    valuation_row: &[f64],
    budget: f64,
    effective_prices: &[f64],
    tie_tol: f64,
) -> Result<DemandResponse, MarketError> {
    if valuation_row.len() != effective_prices.len() {
        return Err(MarketError::DimensionMismatch {
            context: "valuation vs prices",
            expected: valuation_row.len(),
            got: effective_prices.len(),
        });
    }
    let mut saturating = Vec::new();
    let mut best_ratio = 0.0_f64;
    for (j, (&v, &q)) in valuation_row.iter().zip(effective_prices).enumerate() {
        // A negative effective price is a money pump even at zero value.
        if q < -NUM_TOL || (v > NUM_TOL && q <= NUM_TOL) {
            saturating.push(j);
            continue;
        }
        if v > 0.0 && q > NUM_TOL {
            best_ratio = best_ratio.max(v / q);
        }
    }
    if !saturating.is_empty() {
        return Ok(DemandResponse::Unbounded {
            saturating_items: saturating,
        });
    }
    let window = tie_tol * best_ratio.max(1.0);
    let spend_items: Vec<usize> = valuation_row
        .iter()
        .zip(effective_prices)
        .enumerate()
        .filter(|(_, (&v, &q))| v > 0.0 && q > NUM_TOL && v / q >= best_ratio - window)
        .map(|(j, _)| j)
        .collect();
    let indifferent = (best_ratio - 1.0).abs() <= window;
    let (spend, leftover) = if best_ratio > 1.0 + window {
        (budget, 0.0)
    } else {
        // At a tie any split is admissible; report the all-leftover corner.
        (0.0, budget)
    };
    let spend_items = if best_ratio >= 1.0 - window {
        spend_items
    } else {
        Vec::new()
    };
    Ok(DemandResponse::Bounded(DemandBundle {
        spend_items,
        spend_amount: spend,
        leftover,
        bang_per_buck: best_ratio,
        indifferent,
    }))
}

/// The concave objective whose maximizer is the market equilibrium
/// allocation: `sum_i B_i ln(u_i) - delta_i`.
pub fn eg_objective(market: &Market, alloc: &Allocation) -> Result<f64, MarketError> {
    if alloc.x.rows() != market.n_buyers() || alloc.x.cols() != market.m_items() {
        return Err(MarketError::DimensionMismatch {
            context: "allocation vs market",
            expected: market.n_buyers() * market.m_items(),
            got: alloc.x.rows() * alloc.x.cols(),
        });
    }
    let mut total = 0.0;
    for i in 0..market.n_buyers() {
        let u = alloc.utility(market, i);
        if !(u > 0.0) {
            return Err(MarketError::NonPositiveUtility { buyer: i, value: u });
        }
        total += market.budget(i) * u.ln() - alloc.delta[i];
    }
    Ok(total)
}

/// Per-item `sum_i x_ij - s_j`.
pub fn excess_demand(market: &Market, alloc: &Allocation) -> Vec<f64> {
    (0..market.m_items())
        .map(|j| alloc.x.col_sum(j) - market.supplies()[j])
        .collect()
}
