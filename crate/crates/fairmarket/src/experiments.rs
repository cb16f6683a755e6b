//! Random-market experiment pipeline: sample markets by rejection, solve
//! with and without the constraint family, audit welfare and Pareto gaps,
//! run the online loop, and aggregate everything into CSV rows, summary
//! statistics, and chart series.

use std::io::Write;

use crate::audit::{
    buyer_item_pareto_gap, buyer_pareto_gap, summarize, welfare_delta, GroupSummary,
};
use crate::chart::{Chart, Series};
use crate::generate::{
    family_constraints, generate_market, group_split, target_buyers, ExperimentConfig,
    Family, GenerateError,
};
use crate::opic::{run_opic, time_averaged_violation, RateSchedule, SolverOracle};
use crate::solver::{solve_constrained_eg, SolverConfig};

/// Everything measured for one sampled market.
#[derive(Clone, Debug)]
pub struct MarketOutcome {
    pub market_id: usize,
    pub attempts: usize,
    pub u_base: Vec<f64>,
    pub u_constrained: Vec<f64>,
    pub deltas: Vec<f64>,
    pub gap_buyer: f64,
    pub gap_buyer_item: f64,
    /// Time-averaged max constraint violation after each online epoch.
    pub violation_by_epoch: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub family: Family,
    pub outcomes: Vec<MarketOutcome>,
    /// Markets skipped because a solve failed, with the round it failed at.
    pub failures: Vec<(usize, String)>,
    pub target: GroupSummary,
    pub other: GroupSummary,
    pub target_buyers: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("all {0} markets failed")]
    AllFailed(usize),
}

/// Runs the full pipeline. Per-market failures are recorded and skipped;
/// only total failure is an error.
pub fn run_random_experiments(
    config: &ExperimentConfig,
    solver: &SolverConfig,
) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let split = group_split(config.n_buyers, config.n_items);
    let targets = target_buyers(config);
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut target_deltas = Vec::new();
    let mut other_deltas = Vec::new();

    for market_id in 0..config.n_markets {
        let sample = match generate_market(config, market_id as u64, solver) {
            Ok(s) => s,
            Err(GenerateError::Solve(e)) => {
                failures.push((market_id, e.to_string()));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let cs = family_constraints(config, &sample.market);
        let constrained = match solve_constrained_eg(&sample.market, &cs, solver) {
            Ok(eq) => eq,
            Err(e) => {
                failures.push((market_id, e.to_string()));
                continue;
            }
        };

        let delta = welfare_delta(&sample.market, &sample.baseline, &constrained, &targets);
        // Protected exposure for the buyer-item gap: under the fixed split
        // every family protects the first buyer half's exposure to the
        // first item half (constrained buyers for the buyer-side families,
        // the initially disadvantaged buyers against the constrained items
        // for item parity).
        let (gap_buyers, gap_items) = (split.buyers_first.clone(), split.items_first.clone());
        let gap_buyer = match buyer_pareto_gap(&sample.market, &constrained.alloc.x) {
            Ok(r) => r.gap,
            Err(e) => {
                failures.push((market_id, e.to_string()));
                continue;
            }
        };
        let gap_buyer_item = match buyer_item_pareto_gap(
            &sample.market,
            &constrained.alloc.x,
            &gap_buyers,
            &gap_items,
        ) {
            Ok(r) => r.gap,
            Err(e) => {
                failures.push((market_id, e.to_string()));
                continue;
            }
        };

        let mut oracle = SolverOracle::new(&sample.market, *solver);
        let trace = match run_opic(
            &mut oracle,
            &cs,
            RateSchedule::Constant(config.learning_rate),
            config.opic_rounds,
        ) {
            Ok(t) => t,
            Err(e) => {
                failures.push((market_id, e.to_string()));
                continue;
            }
        };
        let violation_by_epoch: Vec<f64> = (1..=trace.rounds.len())
            .map(|upto| {
                time_averaged_violation(&trace, &cs, upto)
                    .map(|r| r.max_violation)
                    .unwrap_or(f64::NAN)
            })
            .collect();

        for (i, d) in delta.per_buyer.iter().enumerate() {
            if targets.contains(&i) {
                target_deltas.push(*d);
            } else {
                other_deltas.push(*d);
            }
        }
        outcomes.push(MarketOutcome {
            market_id,
            attempts: sample.attempts,
            u_base: sample.baseline.utilities(&sample.market),
            u_constrained: constrained.utilities(&sample.market),
            deltas: delta.per_buyer,
            gap_buyer,
            gap_buyer_item,
            violation_by_epoch,
        });
    }

    if outcomes.is_empty() {
        return Err(ExperimentError::AllFailed(config.n_markets));
    }
    Ok(ExperimentReport {
        family: config.family,
        outcomes,
        failures,
        target: summarize(&target_deltas),
        other: summarize(&other_deltas),
        target_buyers: targets,
    })
}

impl ExperimentReport {
    /// One row per (market, buyer) with the market-level metrics repeated.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "market_id,family,buyer_id,group,u_base,u_constrained,delta,gap_buyer,gap_buyer_item,violation_at_end"
        )?;
        for o in &self.outcomes {
            let viol_end = o.violation_by_epoch.last().copied().unwrap_or(f64::NAN);
            for i in 0..o.u_base.len() {
                let group = if self.target_buyers.contains(&i) {
                    "target"
                } else {
                    "other"
                };
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    o.market_id,
                    self.family.name(),
                    i,
                    group,
                    o.u_base[i],
                    o.u_constrained[i],
                    o.deltas[i],
                    o.gap_buyer,
                    o.gap_buyer_item,
                    viol_end
                )?;
            }
        }
        Ok(())
    }

    /// Mean and percentile band of the time-averaged violation per epoch.
    pub fn violation_by_epoch(&self) -> Vec<(f64, f64, f64)> {
        let epochs = self
            .outcomes
            .iter()
            .map(|o| o.violation_by_epoch.len())
            .min()
            .unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let vals: Vec<f64> = self
                    .outcomes
                    .iter()
                    .map(|o| o.violation_by_epoch[e])
                    .collect();
                let s = summarize(&vals);
                (s.mean, s.p05, s.p95)
            })
            .collect()
    }

    pub fn write_violation_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,mean,p05,p95")?;
        for (e, (mean, p05, p95)) in self.violation_by_epoch().iter().enumerate() {
            writeln!(out, "{},{},{},{}", e + 1, mean, p05, p95)?;
        }
        Ok(())
    }

    pub fn violation_chart(&self) -> Chart {
        let per_epoch = self.violation_by_epoch();
        let x: Vec<f64> = (1..=per_epoch.len()).map(|e| e as f64).collect();
        let y: Vec<f64> = per_epoch.iter().map(|v| v.0).collect();
        let lo: Vec<f64> = per_epoch.iter().map(|v| v.1).collect();
        let hi: Vec<f64> = per_epoch.iter().map(|v| v.2).collect();
        Chart {
            title: format!("time-averaged violation ({})", self.family.name()),
            x_label: "epoch".into(),
            y_label: "max violation".into(),
            series: vec![Series::line(self.family.name(), x, y).with_band(lo, hi)],
        }
    }

    pub fn write_summary(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "family {}: {} markets ({} failed)",
            self.family.name(),
            self.outcomes.len(),
            self.failures.len()
        )?;
        writeln!(
            out,
            "  target delta: mean {:+.4} [{:+.4}, {:+.4}]",
            self.target.mean, self.target.p05, self.target.p95
        )?;
        writeln!(
            out,
            "  other delta:  mean {:+.4} [{:+.4}, {:+.4}]",
            self.other.mean, self.other.p05, self.other.p95
        )?;
        let gaps_b: Vec<f64> = self.outcomes.iter().map(|o| o.gap_buyer).collect();
        let gaps_bi: Vec<f64> = self.outcomes.iter().map(|o| o.gap_buyer_item).collect();
        writeln!(
            out,
            "  buyer gap mean {:.4}, buyer-item gap mean {:.4}",
            summarize(&gaps_b).mean,
            summarize(&gaps_bi).mean
        )?;
        if let Some((mean, _, _)) = self.violation_by_epoch().last() {
            writeln!(out, "  final time-averaged violation mean {mean:.4}")?;
        }
        Ok(())
    }
}
