//! Exhaustive grid search over allocations for desk-sized instances.
//!
//! Independent of the dual solver: enumerates every allocation on a uniform
//! grid subject to supply and (within one grid step of slack) the
//! constraints, sets each buyer's leftover to its closed-form optimum
//! `max(0, B_i - v_i . x_i)`, and returns the grid maximizer of the log
//! objective. Used as the oracle the real solver is compared against.

use crate::constraints::{evaluate_constraints, LinearConstraintSet};
use crate::market::{Allocation, Market};
use crate::mat::Mat;

use super::SolveError;

const MAX_CELLS: usize = 6;

pub fn brute_force_eg(
    market: &Market,
    cs: &LinearConstraintSet,
    grid_step: f64,
) -> Result<(Allocation, f64), SolveError> {
    let n = market.n_buyers();
    let m = market.m_items();
    let cells = n * m;
    if cells > MAX_CELLS {
        return Err(SolveError::TooLarge {
            cells,
            max_cells: MAX_CELLS,
        });
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(SolveError::BadGridStep(grid_step));
    }

    // Pair order is item-major so the per-item supply budget prunes early.
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .collect();
    let item_units: Vec<usize> = market
        .supplies()
        .iter()
        .map(|s| (s / grid_step + 1e-9).floor() as usize)
        .collect();

    let mut state = Search {
        market,
        cs,
        grid_step,
        pairs,
        x: Mat::zeros(n, m),
        values: vec![0.0; n],
        best_obj: f64::NEG_INFINITY,
        best_x: Mat::zeros(n, m),
    };
    let units0 = item_units[state.pairs[0].1];
    state.descend(0, units0, &item_units);

    if state.best_obj == f64::NEG_INFINITY {
        return Err(SolveError::Numeric(
            "no grid point satisfies the constraints".into(),
        ));
    }

    let delta: Vec<f64> = (0..n)
        .map(|i| {
            let value: f64 = crate::mat::dot(market.valuation_row(i), state.best_x.row(i));
            (market.budget(i) - value).max(0.0)
        })
        .collect();
    let alloc = Allocation {
        x: state.best_x,
        delta,
    };
    let obj = state.best_obj;
    Ok((alloc, obj))
}

struct Search<'a> {
    market: &'a Market,
    cs: &'a LinearConstraintSet,
    grid_step: f64,
    pairs: Vec<(usize, usize)>,
    x: Mat,
    values: Vec<f64>,
    best_obj: f64,
    best_x: Mat,
}

impl Search<'_> {
    fn descend(&mut self, level: usize, units_left: usize, item_units: &[usize]) {
        if level == self.pairs.len() {
            self.score_leaf();
            return;
        }
        let (i, j) = self.pairs[level];
        let v = self.market.valuations().get(i, j);
        // Units available for the next pair: reset when the item changes.
        let item_changes =
            level + 1 < self.pairs.len() && self.pairs[level + 1].1 != j;
        let next_base = if item_changes {
            item_units[self.pairs[level + 1].1]
        } else {
            0
        };
        for k in 0..=units_left {
            let amount = k as f64 * self.grid_step;
            self.x.set(i, j, amount);
            self.values[i] += v * amount;
            let next = if item_changes { next_base } else { units_left - k };
            self.descend(level + 1, next, item_units);
            self.values[i] -= v * amount;
        }
        self.x.set(i, j, 0.0);
    }

    fn score_leaf(&mut self) {
        let slack = self.grid_step + 1e-12;
        if !self.cs.is_empty() {
            let residual = evaluate_constraints(self.cs, &self.x);
            if residual.max_violation > slack {
                return;
            }
        }
        let mut obj = 0.0;
        for i in 0..self.market.n_buyers() {
            let b = self.market.budget(i);
            let value = self.values[i];
            let delta = (b - value).max(0.0);
            obj += b * (value + delta).ln() - delta;
        }
        if obj > self.best_obj {
            self.best_obj = obj;
            self.best_x = self.x.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_aef, build_pbp};
    use std::collections::BTreeSet;

    #[test]
    fn single_buyer_takes_everything() {
        let market = Market::new(vec![1.0], Mat::from_rows(&[vec![2.0]])).unwrap();
        let cs = LinearConstraintSet::empty(1, 1);
        let (alloc, _) = brute_force_eg(&market, &cs, 0.01).unwrap();
        assert!((alloc.x.get(0, 0) - 1.0).abs() < 1e-9);
        assert_eq!(alloc.delta[0], 0.0);
    }

    #[test]
    fn instance_too_large_is_rejected() {
        let v = Mat::from_rows(&[vec![1.0; 4], vec![1.0; 4]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = LinearConstraintSet::empty(2, 4);
        assert!(matches!(
            brute_force_eg(&market, &cs, 0.05),
            Err(SolveError::TooLarge { .. })
        ));
        let small = Market::new(vec![1.0], Mat::from_rows(&[vec![1.0]])).unwrap();
        assert!(matches!(
            brute_force_eg(&small, &LinearConstraintSet::empty(1, 1), 0.2),
            Err(SolveError::BadGridStep(_))
        ));
    }

    #[test]
    fn parity_grid_optimum_splits_evenly() {
        // Two buyers valuing items (2,1) and (1,2); parity on the first
        // buyer forces the half/half split with both utilities 1.5.
        let v = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_pbp(
            &market,
            &BTreeSet::from([0]),
            &BTreeSet::from([0]),
            &BTreeSet::from([1]),
            1.0,
        )
        .unwrap();
        let (alloc, _) = brute_force_eg(&market, &cs, 0.01).unwrap();
        let utils = alloc.utilities(&market);
        assert!((utils[0] - 1.5).abs() < 0.05, "u0 {}", utils[0]);
        assert!((utils[1] - 1.5).abs() < 0.05, "u1 {}", utils[1]);
    }

    #[test]
    fn floor_grid_optimum_respects_floor() {
        // Buyer A values only the second item; the floor still forces it to
        // hold half of the first.
        let v = Mat::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let cs = build_aef(
            &market,
            &BTreeSet::from([0]),
            &BTreeSet::from([0]),
            0.5,
        )
        .unwrap();
        let (alloc, _) = brute_force_eg(&market, &cs, 0.01).unwrap();
        assert!(alloc.x.get(0, 0) >= 0.5 - 0.011);
        let utils = alloc.utilities(&market);
        assert!((utils[0] - 2.0).abs() < 0.05, "uA {}", utils[0]);
        assert!((utils[1] - 1.0).abs() < 0.05, "uB {}", utils[1]);
    }
}
