//! Random market generation with rejection sampling.
//!
//! Markets have unit budgets and supplies and i.i.d. uniform valuations.
//! Buyers split into two equal groups (first half `C`, second half `D`) and
//! items into two equal groups (first half `A`, second half `B`). Each
//! constraint family resamples until its trigger condition holds at the
//! unconstrained equilibrium, so the constraint has something to correct:
//! parity families require one side to start with at most 0.7 of the other
//! side's exposure, floors require the protected share to start below 15%.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audit::exposure;
use crate::constraints::{build_aef, build_pbp, build_pip, LinearConstraintSet};
use crate::market::Market;
use crate::mat::Mat;
use crate::solver::{solve_offset_eg, SolveError, SolverConfig, TaxSubsidyEquilibrium};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Pbp,
    Pip,
    Aef,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Pbp => "pbp",
            Family::Pip => "pip",
            Family::Aef => "aef",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n_markets: usize,
    pub n_buyers: usize,
    pub n_items: usize,
    pub seed: u64,
    /// Parity families: accepted when the disadvantaged-side exposure is at
    /// most this fraction of the other side's.
    pub parity_ratio: f64,
    /// Floor family: accepted when the protected share starts below this.
    pub aef_initial_share: f64,
    /// Floor family: the constraint targets this share of protected supply.
    pub aef_target_share: f64,
    pub opic_rounds: usize,
    pub learning_rate: f64,
    pub rejection_budget: usize,
}

impl ExperimentConfig {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            n_markets: 50,
            n_buyers: 8,
            n_items: 10,
            seed: 0,
            parity_ratio: 0.7,
            aef_initial_share: 0.15,
            aef_target_share: 0.30,
            opic_rounds: 50,
            learning_rate: 0.2,
            rejection_budget: 10_000,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.n_buyers < 2 || self.n_items < 2 || self.n_markets == 0 {
            return Err(GenerateError::BadCounts);
        }
        for (name, v) in [
            ("parity_ratio", self.parity_ratio),
            ("aef_initial_share", self.aef_initial_share),
            ("aef_target_share", self.aef_target_share),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(GenerateError::BadThreshold { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("counts must be positive (>= 2 buyers and items)")]
    BadCounts,
    #[error("threshold {name} must lie in (0, 1), got {value}")]
    BadThreshold { name: &'static str, value: f64 },
    #[error(
        "rejection budget of {budget} exhausted: {accepted_rate:.1}% of candidates met the condition"
    )]
    RejectionBudget { budget: usize, accepted_rate: f64 },
    #[error("equilibrium solve failed during sampling: {0}")]
    Solve(#[from] Box<SolveError>),
}

/// Index sets for the fixed group split.
pub struct GroupSplit {
    pub buyers_first: Vec<usize>,
    pub buyers_second: Vec<usize>,
    pub items_first: Vec<usize>,
    pub items_second: Vec<usize>,
}

pub fn group_split(n_buyers: usize, n_items: usize) -> GroupSplit {
    let nb = n_buyers / 2;
    let mi = n_items / 2;
    GroupSplit {
        buyers_first: (0..nb).collect(),
        buyers_second: (nb..n_buyers).collect(),
        items_first: (0..mi).collect(),
        items_second: (mi..n_items).collect(),
    }
}

/// A plain random market (uniform valuations, unit budgets and supplies,
/// fixed halves as groups) without any rejection condition.
pub fn random_market(n_buyers: usize, n_items: usize, seed: u64) -> Market {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    raw_market(&mut rng, n_buyers, n_items)
}

/// A sampled market along with its unconstrained equilibrium (computed
/// anyway for the rejection test) and the attempt count.
pub struct SampledMarket {
    pub market: Market,
    pub baseline: TaxSubsidyEquilibrium,
    pub attempts: usize,
}

fn raw_market(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Market {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let split = group_split(n, m);
    let buyer_groups: Vec<String> = (0..n)
        .map(|i| {
            if split.buyers_first.contains(&i) {
                "C".into()
            } else {
                "D".into()
            }
        })
        .collect();
    let item_groups: Vec<String> = (0..m)
        .map(|j| {
            if split.items_first.contains(&j) {
                "A".into()
            } else {
                "B".into()
            }
        })
        .collect();
    Market::new(vec![1.0; n], Mat::from_rows(&rows))
        .and_then(|mk| mk.with_groups(Some(buyer_groups), Some(item_groups)))
        .expect("sampled market is well formed")
}

fn accept(
    config: &ExperimentConfig,
    split: &GroupSplit,
    eq: &TaxSubsidyEquilibrium,
) -> bool {
    match config.family {
        Family::Pbp => {
            // Exposure of item group A to the constrained buyers starts at
            // most parity_ratio of group B's.
            let a = exposure(&eq.alloc.x, &split.buyers_first, &split.items_first);
            let b = exposure(&eq.alloc.x, &split.buyers_first, &split.items_second);
            a <= config.parity_ratio * b
        }
        Family::Pip => {
            let a = exposure(&eq.alloc.x, &split.buyers_first, &split.items_first);
            let b = exposure(&eq.alloc.x, &split.buyers_second, &split.items_first);
            a <= config.parity_ratio * b
        }
        Family::Aef => {
            let supply: f64 = split.items_first.len() as f64;
            let share =
                exposure(&eq.alloc.x, &split.buyers_first, &split.items_first) / supply;
            share < config.aef_initial_share
        }
    }
}

/// Draws one market satisfying the family's rejection condition. The RNG
/// stream is derived from `(config.seed, market_index)`, so markets are
/// reproducible individually.
pub fn generate_market(
    config: &ExperimentConfig,
    market_index: u64,
    solver: &SolverConfig,
) -> Result<SampledMarket, GenerateError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9e3779b9 * (market_index + 1)));
    let split = group_split(config.n_buyers, config.n_items);
    let zero = Mat::zeros(config.n_buyers, config.n_items);
    for attempt in 1..=config.rejection_budget {
        let market = raw_market(&mut rng, config.n_buyers, config.n_items);
        let baseline = solve_offset_eg(&market, &zero, solver).map_err(Box::new)?;
        if accept(config, &split, &baseline) {
            return Ok(SampledMarket {
                market,
                baseline,
                attempts: attempt,
            });
        }
    }
    Err(GenerateError::RejectionBudget {
        budget: config.rejection_budget,
        accepted_rate: 0.0,
    })
}

/// The constraint instance each family imposes on a sampled market.
pub fn family_constraints(
    config: &ExperimentConfig,
    market: &Market,
) -> LinearConstraintSet {
    let split = group_split(config.n_buyers, config.n_items);
    let to_set = |v: &[usize]| -> BTreeSet<usize> { v.iter().copied().collect() };
    match config.family {
        Family::Pbp => {
            let alpha = split.items_second.len() as f64 / split.items_first.len() as f64;
            build_pbp(
                market,
                &to_set(&split.buyers_first),
                &to_set(&split.items_first),
                &to_set(&split.items_second),
                alpha,
            )
            .expect("parity rows over the fixed split")
        }
        Family::Pip => {
            let alpha = split.buyers_first.len() as f64 / split.buyers_second.len() as f64;
            build_pip(
                market,
                &to_set(&split.items_first),
                &to_set(&split.buyers_first),
                &to_set(&split.buyers_second),
                alpha,
            )
            .expect("item parity rows over the fixed split")
        }
        Family::Aef => {
            let floor = config.aef_target_share * split.items_first.len() as f64;
            build_aef(
                market,
                &to_set(&split.buyers_first),
                &to_set(&split.items_first),
                floor,
            )
            .expect("floor row over the fixed split")
        }
    }
}

/// Target buyers for welfare accounting: the constrained buyers for the
/// buyer-side families, the initially disadvantaged group for item parity.
pub fn target_buyers(config: &ExperimentConfig) -> Vec<usize> {
    let split = group_split(config.n_buyers, config.n_items);
    split.buyers_first
}
