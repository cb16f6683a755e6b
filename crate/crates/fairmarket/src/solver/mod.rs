//! Equilibrium computation for quasi-linear Fisher markets.
//!
//! Both entry points work on the dual side: item prices and constraint
//! multipliers are the variables, each buyer's best response is closed
//! form, and the dual function is minimized by a tatonnement-style
//! first-order warmup followed by a smoothed-dual Newton continuation.
//! The primal allocation is then recovered by an exact refinement of the
//! detected active structure, falling back to a tie-repair feasibility LP
//! when the structure is degenerate. Every returned equilibrium carries an
//! independently recomputed KKT report.

mod brute;
mod dual;
mod feasibility;
mod polish;
mod repair;
mod verify;

pub use brute::brute_force_eg;
pub use feasibility::{feasibility_presolve, FeasibilityReport};
pub use verify::{verify_equilibrium, KktReport};

use thiserror::Error;

use crate::constraints::{
    interventions_from_multipliers, ConstraintError, LinearConstraintSet, Multipliers,
};
use crate::market::{Allocation, Market, MarketError, PriceSystem};
use crate::mat::Mat;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    /// Fixed step `c`.
    Constant(f64),
    /// `c / (t + 1)^exponent`.
    Polynomial { scale: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn step(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(c) => c,
            StepSchedule::Polynomial { scale, exponent } => {
                scale / ((t + 1) as f64).powf(exponent)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Target for the final KKT max residual.
    pub tol: f64,
    /// Iteration budget across all phases.
    pub max_iters: usize,
    /// Step schedule for the first-order warmup phase.
    pub step: StepSchedule,
    /// Reserved for randomized tie repair; the default pipeline is
    /// deterministic and does not consume it.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 4000,
            step: StepSchedule::Polynomial {
                scale: 0.1,
                exponent: 0.5,
            },
            seed: 0,
        }
    }
}

/// A tax-subsidy equilibrium: allocation, base prices, the intervention
/// matrix, the multipliers that generated it, and the KKT audit.
#[derive(Clone, Debug)]
pub struct TaxSubsidyEquilibrium {
    pub alloc: Allocation,
    pub prices: PriceSystem,
    pub multipliers: Multipliers,
    /// Constraint set the multipliers refer to; empty for offset solves.
    pub constraints: LinearConstraintSet,
    pub kkt: KktReport,
}

impl TaxSubsidyEquilibrium {
    pub fn utilities(&self, market: &Market) -> Vec<f64> {
        self.alloc.utilities(market)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid market: {0}")]
    Market(#[from] MarketError),
    #[error("invalid constraints: {0}")]
    Constraints(#[from] ConstraintError),
    #[error(
        "solver did not reach tolerance {tol:.1e}: best max residual {max_residual:.3e}"
    )]
    NotConverged {
        tol: f64,
        max_residual: f64,
        best: Box<TaxSubsidyEquilibrium>,
    },
    #[error("demand is unbounded: effective price of a positively valued item stays at zero")]
    UnboundedDemand,
    #[error(
        "constraints are infeasible with the supply: minimal total violation {min_violation:.3e}"
    )]
    Infeasible {
        min_violation: f64,
        report: Box<FeasibilityReport>,
    },
    #[error("instance too large for exhaustive search: {cells} cells > {max_cells}")]
    TooLarge { cells: usize, max_cells: usize },
    #[error("grid step {0} outside (0, 0.1]")]
    BadGridStep(f64),
    #[error("interventions must be finite")]
    NonFiniteInterventions,
    #[error("numerical failure: {0}")]
    Numeric(String),
}

/// Solves the market with a fixed intervention matrix (possibly zero, which
/// gives the plain equilibrium). The intervention matrix is echoed back in
/// the result.
pub fn solve_offset_eg(
    market: &Market,
    interventions: &Mat,
    config: &SolverConfig,
) -> Result<TaxSubsidyEquilibrium, SolveError> {
    solve_offset_eg_warm(market, interventions, config, None)
}

/// Offset solve with an optional warm-start price vector (used by the
/// online loop, where successive rounds differ only slightly).
pub fn solve_offset_eg_warm(
    market: &Market,
    interventions: &Mat,
    config: &SolverConfig,
    warm_prices: Option<&[f64]>,
) -> Result<TaxSubsidyEquilibrium, SolveError> {
    if interventions.rows() != market.n_buyers() || interventions.cols() != market.m_items() {
        return Err(SolveError::Market(MarketError::DimensionMismatch {
            context: "interventions vs market",
            expected: market.n_buyers() * market.m_items(),
            got: interventions.rows() * interventions.cols(),
        }));
    }
    if interventions.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFiniteInterventions);
    }
    let empty = LinearConstraintSet::empty(market.n_buyers(), market.m_items());
    run_pipeline(market, &empty, Some(interventions), config, warm_prices)
}

/// Solves the constrained program and converts the optimal multipliers into
/// price interventions, so the returned triple is a tax-subsidy equilibrium
/// whose allocation satisfies the constraints.
pub fn solve_constrained_eg(
    market: &Market,
    cs: &LinearConstraintSet,
    config: &SolverConfig,
) -> Result<TaxSubsidyEquilibrium, SolveError> {
    if !cs.is_empty() {
        feasibility_presolve(market, cs)?;
    }
    run_pipeline(market, cs, None, config, None)
}

fn run_pipeline(
    market: &Market,
    cs: &LinearConstraintSet,
    fixed: Option<&Mat>,
    config: &SolverConfig,
    warm_prices: Option<&[f64]>,
) -> Result<TaxSubsidyEquilibrium, SolveError> {
    let problem = dual::DualProblem::new(market, cs, fixed);
    let duals = dual::minimize(&problem, config, warm_prices)?;

    // Exact refinement from the smoothed solution's active structure.
    let mut best: Option<TaxSubsidyEquilibrium> = None;
    if let Some(eq) = polish::refine(&problem, &duals)
        .and_then(|sol| assemble(market, cs, fixed, sol))
    {
        if eq.kkt.max_residual <= config.tol {
            return Ok(eq);
        }
        best = Some(eq);
    }

    // Degenerate structure: resolve ties with the feasibility LP, then try
    // one more refinement seeded by the LP's support.
    match repair::repair(&problem, &duals) {
        Ok(repaired) => {
            if let Some(eq) = polish::refine_from_support(&problem, &duals, &repaired)
                .and_then(|sol| assemble(market, cs, fixed, sol))
            {
                if eq.kkt.max_residual <= config.tol {
                    return Ok(eq);
                }
                if best
                    .as_ref()
                    .is_none_or(|b| eq.kkt.max_residual < b.kkt.max_residual)
                {
                    best = Some(eq);
                }
            }
            if let Some(eq) = assemble(market, cs, fixed, repaired) {
                if eq.kkt.max_residual <= config.tol {
                    return Ok(eq);
                }
                if best
                    .as_ref()
                    .is_none_or(|b| eq.kkt.max_residual < b.kkt.max_residual)
                {
                    best = Some(eq);
                }
            }
        }
        Err(repair::RepairError::Saturating) => {
            if best.is_none() {
                return Err(SolveError::UnboundedDemand);
            }
        }
        Err(_) => {}
    }

    match best {
        Some(best) => Err(SolveError::NotConverged {
            tol: config.tol,
            max_residual: best.kkt.max_residual,
            best: Box::new(best),
        }),
        None => Err(SolveError::UnboundedDemand),
    }
}

/// Primal-dual candidate produced by refinement or repair.
pub(crate) struct Candidate {
    pub x: Mat,
    pub delta: Vec<f64>,
    pub prices: Vec<f64>,
    pub mult: Multipliers,
}


fn assemble(
    market: &Market,
    cs: &LinearConstraintSet,
    fixed: Option<&Mat>,
    candidate: Candidate,
) -> Option<TaxSubsidyEquilibrium> {
    let Candidate {
        mut x,
        mut delta,
        prices,
        mult,
    } = candidate;
    // Tiny numeric negatives are clamped; real negatives invalidate.
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let v = x.get(i, j);
            if v < -1e-9 || !v.is_finite() {
                return None;
            }
            if v < 0.0 {
                x.set(i, j, 0.0);
            }
        }
    }
    for d in &mut delta {
        if *d < -1e-9 || !d.is_finite() {
            return None;
        }
        if *d < 0.0 {
            *d = 0.0;
        }
    }
    let interventions = if let Some(fixed) = fixed {
        fixed.clone()
    } else {
        interventions_from_multipliers(cs, &mult).ok()?
    };
    let alloc = Allocation { x, delta };
    let prices = PriceSystem {
        base: prices,
        interventions,
    };
    let eq = TaxSubsidyEquilibrium {
        alloc,
        prices,
        multipliers: mult,
        constraints: cs.clone(),
        kkt: KktReport::empty(market.n_buyers(), market.m_items()),
    };
    let kkt = verify_equilibrium(market, &eq, 1e-7);
    Some(TaxSubsidyEquilibrium { kkt, ..eq })
}
