//! Online price intervention computation.
//!
//! Each round the designer converts its current constraint multipliers into
//! per-buyer price interventions, observes the equilibrium allocation the
//! market settles at, and takes a projected subgradient step on the
//! multipliers using only the observed constraint violation. No knowledge
//! of valuations or budgets is required.

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constraints::{
    evaluate_constraints, interventions_from_multipliers, ConstraintResidual,
    LinearConstraintSet, Multipliers,
};
use crate::market::{Allocation, Market};
use crate::mat::Mat;
use crate::solver::{solve_offset_eg_warm, SolveError, SolverConfig};

#[derive(Debug, Error)]
pub enum OpicError {
    #[error("oracle failed at round {round}: {source}")]
    Oracle {
        round: usize,
        #[source]
        source: SolveError,
    },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("round {upto} requested but only {available} recorded")]
    OutOfRange { upto: usize, available: usize },
    #[error("invalid intervention matrix: {0}")]
    BadInterventions(#[from] crate::constraints::ConstraintError),
}

/// Anything that can produce an equilibrium allocation for a given
/// intervention matrix: the solver itself, a replayed log, or a noisy
/// wrapper for robustness experiments.
pub trait EquilibriumOracle {
    fn query(&mut self, interventions: &Mat) -> Result<Allocation, SolveError>;

    /// Provenance tag recorded in traces; zero when unknown.
    fn fingerprint(&self) -> u64 {
        0
    }
}

/// Oracle backed by the offset solver. Warm-starts each round at the
/// previous round's prices, which keeps long runs cheap and deterministic.
pub struct SolverOracle<'a> {
    market: &'a Market,
    config: SolverConfig,
    last_prices: Option<Vec<f64>>,
}

impl<'a> SolverOracle<'a> {
    pub fn new(market: &'a Market, config: SolverConfig) -> Self {
        Self {
            market,
            config,
            last_prices: None,
        }
    }
}

impl EquilibriumOracle for SolverOracle<'_> {
    fn query(&mut self, interventions: &Mat) -> Result<Allocation, SolveError> {
        let eq = solve_offset_eg_warm(
            self.market,
            interventions,
            &self.config,
            self.last_prices.as_deref(),
        )?;
        self.last_prices = Some(eq.prices.base.clone());
        Ok(eq.alloc)
    }

    fn fingerprint(&self) -> u64 {
        self.market.fingerprint()
    }
}

/// Replays a recorded sequence of allocations, ignoring the interventions.
pub struct ReplayOracle {
    allocations: Vec<Allocation>,
    cursor: usize,
}

impl ReplayOracle {
    pub fn new(allocations: Vec<Allocation>) -> Self {
        Self {
            allocations,
            cursor: 0,
        }
    }
}

impl EquilibriumOracle for ReplayOracle {
    fn query(&mut self, _interventions: &Mat) -> Result<Allocation, SolveError> {
        let alloc = self
            .allocations
            .get(self.cursor)
            .cloned()
            .ok_or_else(|| SolveError::Numeric("replay log exhausted".into()))?;
        self.cursor += 1;
        Ok(alloc)
    }
}

/// Wraps another oracle and perturbs the observed allocations with seeded
/// uniform noise, clamped at zero.
pub struct NoisyOracle<O> {
    inner: O,
    amplitude: f64,
    rng: ChaCha8Rng,
}

impl<O: EquilibriumOracle> NoisyOracle<O> {
    pub fn new(inner: O, amplitude: f64, seed: u64) -> Self {
        Self {
            inner,
            amplitude,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<O: EquilibriumOracle> EquilibriumOracle for NoisyOracle<O> {
    fn query(&mut self, interventions: &Mat) -> Result<Allocation, SolveError> {
        let mut alloc = self.inner.query(interventions)?;
        for i in 0..alloc.x.rows() {
            for j in 0..alloc.x.cols() {
                let noise = self.rng.gen_range(-self.amplitude..=self.amplitude);
                let v = (alloc.x.get(i, j) + noise).max(0.0);
                alloc.x.set(i, j, v);
            }
        }
        Ok(alloc)
    }

    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }
}

/// Learning-rate schedule for the multiplier updates. The harmonic choice
/// `c / (t + 1)` is square-summable but not summable, the condition the
/// convergence guarantee needs; the constant choice matches how the loop is
/// run in practice with time-averaged reporting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateSchedule {
    Constant(f64),
    Harmonic(f64),
}

impl RateSchedule {
    pub fn gamma(&self, round: usize) -> f64 {
        match *self {
            RateSchedule::Constant(c) => c,
            RateSchedule::Harmonic(c) => c / (round + 1) as f64,
        }
    }
}

/// Multiplier state between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct OpicState {
    pub round: usize,
    pub multipliers: Multipliers,
}

impl OpicState {
    pub fn initial(cs: &LinearConstraintSet) -> Self {
        // Zeros mean "no intervention" in round zero.
        Self {
            round: 0,
            multipliers: Multipliers::zeros(cs),
        }
    }
}

/// One projected subgradient step from an observed allocation:
/// `l1 <- max(0, l1 + gamma (A1 x - b1))`, `l2 <- l2 + gamma (A2 x - b2)`.
pub fn opic_step(
    state: &OpicState,
    cs: &LinearConstraintSet,
    observed_x: &Mat,
    gamma: f64,
) -> OpicState {
    debug_assert!(gamma > 0.0);
    let residual = evaluate_constraints(cs, observed_x);
    let ineq = state
        .multipliers
        .ineq
        .iter()
        .zip(&residual.ineq)
        .map(|(l, r)| (l + gamma * r).max(0.0))
        .collect();
    let eq = state
        .multipliers
        .eq
        .iter()
        .zip(&residual.eq)
        .map(|(l, r)| l + gamma * r)
        .collect();
    OpicState {
        round: state.round + 1,
        multipliers: Multipliers { ineq, eq },
    }
}

#[derive(Clone, Debug)]
pub struct OpicRound {
    pub round: usize,
    pub gamma: f64,
    pub multipliers: Multipliers,
    pub interventions: Mat,
    pub allocation: Allocation,
    pub residual: ConstraintResidual,
}

#[derive(Clone, Debug)]
pub struct OpicTrace {
    pub rounds: Vec<OpicRound>,
    pub schedule: RateSchedule,
    pub market_fingerprint: u64,
}

/// Runs the loop for a fixed number of rounds and records everything.
pub fn run_opic(
    oracle: &mut dyn EquilibriumOracle,
    cs: &LinearConstraintSet,
    schedule: RateSchedule,
    rounds: usize,
) -> Result<OpicTrace, OpicError> {
    let mut state = OpicState::initial(cs);
    let mut trace = OpicTrace {
        rounds: Vec::with_capacity(rounds),
        schedule,
        market_fingerprint: oracle.fingerprint(),
    };
    for t in 0..rounds {
        let interventions = interventions_from_multipliers(cs, &state.multipliers)?;
        let allocation = oracle
            .query(&interventions)
            .map_err(|source| OpicError::Oracle { round: t, source })?;
        let residual = evaluate_constraints(cs, &allocation.x);
        let gamma = schedule.gamma(t);
        trace.rounds.push(OpicRound {
            round: t,
            gamma,
            multipliers: state.multipliers.clone(),
            interventions,
            allocation: allocation.clone(),
            residual,
        });
        state = opic_step(&state, cs, &allocation.x, gamma);
    }
    Ok(trace)
}

/// Runs the loop until the multiplier update moves less than
/// `movement_tol` in max norm (or the round cap is hit). Returns the trace
/// and whether the movement criterion was met.
pub fn run_opic_until(
    oracle: &mut dyn EquilibriumOracle,
    cs: &LinearConstraintSet,
    schedule: RateSchedule,
    movement_tol: f64,
    max_rounds: usize,
) -> Result<(OpicTrace, bool), OpicError> {
    let mut state = OpicState::initial(cs);
    let mut trace = OpicTrace {
        rounds: Vec::new(),
        schedule,
        market_fingerprint: oracle.fingerprint(),
    };
    for t in 0..max_rounds {
        let interventions = interventions_from_multipliers(cs, &state.multipliers)?;
        let allocation = oracle
            .query(&interventions)
            .map_err(|source| OpicError::Oracle { round: t, source })?;
        let residual = evaluate_constraints(cs, &allocation.x);
        let gamma = schedule.gamma(t);
        trace.rounds.push(OpicRound {
            round: t,
            gamma,
            multipliers: state.multipliers.clone(),
            interventions,
            allocation: allocation.clone(),
            residual,
        });
        let next = opic_step(&state, cs, &allocation.x, gamma);
        let movement = next
            .multipliers
            .ineq
            .iter()
            .zip(&state.multipliers.ineq)
            .chain(next.multipliers.eq.iter().zip(&state.multipliers.eq))
            .fold(0.0_f64, |a, (n, o)| a.max((n - o).abs()));
        state = next;
        if movement < movement_tol {
            return Ok((trace, true));
        }
    }
    Ok((trace, false))
}

/// Constraint residual of the arithmetic mean of the first `upto` observed
/// allocations.
pub fn time_averaged_violation(
    trace: &OpicTrace,
    cs: &LinearConstraintSet,
    upto: usize,
) -> Result<ConstraintResidual, OpicError> {
    if trace.rounds.is_empty() {
        return Err(OpicError::EmptyTrace);
    }
    if upto == 0 || upto > trace.rounds.len() {
        return Err(OpicError::OutOfRange {
            upto,
            available: trace.rounds.len(),
        });
    }
    let first = &trace.rounds[0].allocation.x;
    let mut mean = Mat::zeros(first.rows(), first.cols());
    for record in &trace.rounds[..upto] {
        mean = mean.add_scaled(&record.allocation.x, 1.0);
    }
    let scale = 1.0 / upto as f64;
    let mut scaled = Mat::zeros(first.rows(), first.cols());
    for i in 0..mean.rows() {
        for j in 0..mean.cols() {
            scaled.set(i, j, mean.get(i, j) * scale);
        }
    }
    Ok(evaluate_constraints(cs, &scaled))
}

impl OpicTrace {
    /// One CSV row per round: round, gamma, max violation, then every
    /// multiplier and every signed constraint residual, labeled.
    pub fn write_csv(
        &self,
        cs: &LinearConstraintSet,
        out: &mut impl Write,
    ) -> std::io::Result<()> {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_alphanumeric() { c } else { '_' })
                .collect()
        };
        let mut header = String::from("round,gamma,max_violation");
        for label in cs.ineq_labels() {
            header.push_str(&format!(",lambda_{}", clean(label)));
        }
        for label in cs.eq_labels() {
            header.push_str(&format!(",lambda_{}", clean(label)));
        }
        for label in cs.ineq_labels() {
            header.push_str(&format!(",resid_{}", clean(label)));
        }
        for label in cs.eq_labels() {
            header.push_str(&format!(",resid_{}", clean(label)));
        }
        writeln!(out, "{header}")?;
        for r in &self.rounds {
            let mut line = format!("{},{},{}", r.round, r.gamma, r.residual.max_violation);
            for v in r
                .multipliers
                .ineq
                .iter()
                .chain(&r.multipliers.eq)
                .chain(&r.residual.ineq)
                .chain(&r.residual.eq)
            {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
