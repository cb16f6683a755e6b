//! Welfare and fairness audits: budget-adjusted envy, Pareto gaps via the
//! embedded LP solver, exposure accounting, and winners/losers deltas.

pub mod lp;
mod pareto;

pub use lp::{solve_lp, LinearProgram, LpError, LpOutcome};
pub use pareto::{
    buyer_item_pareto_gap, buyer_pareto_gap, AuditError, ParetoGapReport, ParetoVariant,
};

use std::io::Write;

use crate::market::{Allocation, Market};
use crate::mat::{dot, Mat};
use crate::solver::TaxSubsidyEquilibrium;

/// Pairwise budget-adjusted envy: how much buyer `i` would gain from
/// swapping to buyer `k`'s bundle scaled by the budget ratio `B_i / B_k`.
#[derive(Clone, Debug)]
pub struct EnvyReport {
    /// `pairwise[(i, k)] = max(0, (B_i/B_k) u_i(x_k, d_k) - u_i(x_i, d_i))`.
    pub pairwise: Mat,
    /// Worst envy inside each group of the partition.
    pub group_max: Vec<f64>,
    pub max_within_group: f64,
    pub max_overall: f64,
}

/// Envy computed at each buyer's own valuations. Cross-group envy is
/// reported but only within-group envy is flagged by the callers, since
/// constrained and unconstrained buyers face different effective prices.
pub fn budget_adjusted_envy(
    market: &Market,
    alloc: &Allocation,
    groups: &[Vec<usize>],
) -> EnvyReport {
    let n = market.n_buyers();
    let mut pairwise = Mat::zeros(n, n);
    let mut max_overall = 0.0_f64;
    for i in 0..n {
        let own = alloc.utility(market, i);
        for k in 0..n {
            if i == k {
                continue;
            }
            let gamma = market.budget(i) / market.budget(k);
            let other =
                gamma * (dot(market.valuation_row(i), alloc.x.row(k)) + alloc.delta[k]);
            let envy = (other - own).max(0.0);
            pairwise.set(i, k, envy);
            max_overall = max_overall.max(envy);
        }
    }
    let mut group_max = Vec::with_capacity(groups.len());
    let mut max_within_group = 0.0_f64;
    for group in groups {
        let mut worst = 0.0_f64;
        for &i in group {
            for &k in group {
                if i != k {
                    worst = worst.max(pairwise.get(i, k));
                }
            }
        }
        group_max.push(worst);
        max_within_group = max_within_group.max(worst);
    }
    EnvyReport {
        pairwise,
        group_max,
        max_within_group,
        max_overall,
    }
}

impl EnvyReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "buyer,other,envy")?;
        for i in 0..self.pairwise.rows() {
            for k in 0..self.pairwise.cols() {
                if i != k {
                    writeln!(out, "{},{},{}", i, k, self.pairwise.get(i, k))?;
                }
            }
        }
        Ok(())
    }
}

/// Total allocation mass flowing from a buyer set to an item set.
pub fn exposure(x: &Mat, buyer_set: &[usize], item_set: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in buyer_set {
        assert!(i < x.rows(), "buyer index {i} out of range");
        for &j in item_set {
            assert!(j < x.cols(), "item index {j} out of range");
            total += x.get(i, j);
        }
    }
    total
}

/// Named exposure aggregates for reporting.
#[derive(Clone, Debug)]
pub struct ExposureReport {
    pub entries: Vec<(String, f64)>,
}

pub fn exposure_report(
    x: &Mat,
    pairs: &[(String, Vec<usize>, Vec<usize>)],
) -> ExposureReport {
    let entries = pairs
        .iter()
        .map(|(name, buyers, items)| (name.clone(), exposure(x, buyers, items)))
        .collect();
    ExposureReport { entries }
}

/// Per-buyer utility changes between two equilibria of the same market,
/// summarized for the target group and everyone else.
#[derive(Clone, Debug)]
pub struct WelfareDelta {
    pub per_buyer: Vec<f64>,
    pub target_buyers: Vec<usize>,
    pub target: GroupSummary,
    pub other: GroupSummary,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GroupSummary {
    pub mean: f64,
    pub p05: f64,
    pub p95: f64,
    pub count: usize,
}

/// Linear-interpolation percentile of an unsorted sample; `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn summarize(values: &[f64]) -> GroupSummary {
    if values.is_empty() {
        return GroupSummary::default();
    }
    GroupSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        p05: percentile(values, 0.05),
        p95: percentile(values, 0.95),
        count: values.len(),
    }
}

pub fn welfare_delta(
    market: &Market,
    base: &TaxSubsidyEquilibrium,
    constrained: &TaxSubsidyEquilibrium,
    target_buyers: &[usize],
) -> WelfareDelta {
    let u_base = base.alloc.utilities(market);
    let u_con = constrained.alloc.utilities(market);
    let per_buyer: Vec<f64> = u_base
        .iter()
        .zip(&u_con)
        .map(|(b, c)| c - b)
        .collect();
    let mut target_vals = Vec::new();
    let mut other_vals = Vec::new();
    for (i, &d) in per_buyer.iter().enumerate() {
        if target_buyers.contains(&i) {
            target_vals.push(d);
        } else {
            other_vals.push(d);
        }
    }
    WelfareDelta {
        per_buyer,
        target_buyers: target_buyers.to_vec(),
        target: summarize(&target_vals),
        other: summarize(&other_vals),
    }
}

impl WelfareDelta {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "buyer,group,delta")?;
        for (i, d) in self.per_buyer.iter().enumerate() {
            let group = if self.target_buyers.contains(&i) {
                "target"
            } else {
                "other"
            };
            writeln!(out, "{i},{group},{d}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_bundles_have_no_envy() {
        let v = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let x = Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let alloc = Allocation::new(x, vec![0.0, 0.0]).unwrap();
        let report = budget_adjusted_envy(&market, &alloc, &[vec![0, 1]]);
        assert_eq!(report.max_overall, 0.0);
    }

    #[test]
    fn exit_allocation_no_within_group_envy() {
        // Constrained buyers hold only money; unconstrained hold symmetric
        // bundles. Within-group envy vanishes; cross-group envy is real.
        let v = Mat::from_rows(&[
            vec![1.5, 0.4],
            vec![0.4, 1.5],
            vec![5.0, 2.0],
            vec![2.0, 5.0],
        ]);
        let market = Market::new(vec![1.0; 4], v).unwrap();
        let x = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let alloc = Allocation::new(x, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let report = budget_adjusted_envy(&market, &alloc, &[vec![0, 1], vec![2, 3]]);
        assert!(report.max_within_group <= 1e-12);
        // Constrained buyer 0 would gain 0.5 from unconstrained buyer 2's
        // bundle: value 1.5 against own utility 1.
        assert!((report.pairwise.get(0, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exposure_sums_requested_block() {
        let x = Mat::from_rows(&[vec![1.0 / 3.0, 0.0], vec![0.0, 1.0 / 3.0]]);
        assert!((exposure(&x, &[0, 1], &[0]) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(exposure(&x, &[], &[]), 0.0);
        // Monotone: adding a pair never decreases the value.
        let narrow = exposure(&x, &[0], &[0]);
        let wide = exposure(&x, &[0, 1], &[0, 1]);
        assert!(wide >= narrow);
    }

    #[test]
    fn identical_equilibria_have_zero_deltas() {
        let v = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let market = Market::new(vec![1.0, 1.0], v).unwrap();
        let eq = crate::solver::solve_offset_eg(
            &market,
            &Mat::zeros(2, 2),
            &crate::solver::SolverConfig::default(),
        )
        .unwrap();
        let delta = welfare_delta(&market, &eq, &eq, &[0]);
        assert!(delta.per_buyer.iter().all(|d| *d == 0.0));
        assert_eq!(delta.target.mean, 0.0);
        assert_eq!(delta.other.mean, 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        let vals = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&vals, 0.0), 0.0);
        assert_eq!(percentile(&vals, 1.0), 4.0);
        assert_eq!(percentile(&vals, 0.5), 2.0);
        assert!((percentile(&vals, 0.05) - 0.2).abs() < 1e-12);
    }
}
