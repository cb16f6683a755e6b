//! Smoothed dual of the equilibrium program.
//!
//! Variables are `z = (p, lambda_ineq, lambda_eq)`. For linear quasi-linear
//! buyers the inner maximization is closed form: a buyer facing effective
//! prices `q_i` gets `B_i * max(max_j v_ij / q_ij, 1)` at the optimum, so
//! the dual is
//!
//! `D(z) = s.p + b1.l1 + b2.l2 + sum_i B_i * max(max_j ln(v_ij/q_ij), 0)`
//!
//! plus constants. The max is softened with a log-sum-exp at temperature
//! `tau`, driven toward zero on a fixed continuation ladder; sign
//! constraints (`p >= 0`, `l1 >= 0`, and `q_ij >= 0` on zero-value pairs)
//! enter as one-sided quadratic penalties whose weight grows as `tau`
//! shrinks. Each iterate's negative smoothed excess demand is exactly the
//! dual gradient, so the warmup phase below is plain tatonnement.

use nalgebra::{DMatrix, DVector};

use crate::constraints::LinearConstraintSet;
use crate::market::{Market, NUM_TOL};
use crate::mat::Mat;

use super::{SolveError, SolverConfig};

/// Continuation ladder for the smoothing temperature, relative to the mean
/// budget. The final rung decides how sharply ties are resolved.
const TAU_LADDER: [f64; 9] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
/// Penalty weight is PENALTY_SCALE / tau.
const PENALTY_SCALE: f64 = 10.0;
const MAX_NEWTON_PER_STAGE: usize = 60;
const WARMUP_STEPS: usize = 40;

pub(crate) struct DualProblem<'a> {
    pub market: &'a Market,
    pub cs: &'a LinearConstraintSet,
    pub fixed: Option<&'a Mat>,
    pub m: usize,
    pub k1: usize,
    pub k2: usize,
    pub dim: usize,
    /// Per buyer, the items it positively values. Inert buyers have none.
    pub valued_items: Vec<Vec<usize>>,
    /// Per (i, j) flattened pair: multiplier coefficients entering q_ij.
    pub lambda_terms: Vec<Vec<(usize, f64)>>,
    /// Zero-value pairs whose effective price can go negative.
    pub guarded_pairs: Vec<(usize, usize)>,
}

impl<'a> DualProblem<'a> {
    pub fn new(
        market: &'a Market,
        cs: &'a LinearConstraintSet,
        fixed: Option<&'a Mat>,
    ) -> Self {
        let n = market.n_buyers();
        let m = market.m_items();
        let k1 = cs.n_ineq();
        let k2 = cs.n_eq();
        let mut lambda_terms = vec![Vec::new(); n * m];
        for t in cs.ineq_terms() {
            lambda_terms[t.buyer * m + t.item].push((m + t.row, t.coef));
        }
        for t in cs.eq_terms() {
            lambda_terms[t.buyer * m + t.item].push((m + k1 + t.row, t.coef));
        }
        let valued_items: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..m)
                    .filter(|&j| market.valuations().get(i, j) > NUM_TOL)
                    .collect()
            })
            .collect();
        let mut guarded_pairs = Vec::new();
        for i in 0..n {
            for j in 0..m {
                let valued = market.valuations().get(i, j) > NUM_TOL;
                let offset = !lambda_terms[i * m + j].is_empty()
                    || fixed.is_some_and(|f| f.get(i, j) != 0.0);
                if !valued && offset {
                    guarded_pairs.push((i, j));
                }
            }
        }
        Self {
            market,
            cs,
            fixed,
            m,
            k1,
            k2,
            dim: m + k1 + k2,
            valued_items,
            lambda_terms,
            guarded_pairs,
        }
    }

    #[inline]
    pub fn effective_price(&self, z: &[f64], i: usize, j: usize) -> f64 {
        let mut q = z[j] + self.fixed.map_or(0.0, |f| f.get(i, j));
        for &(zi, c) in &self.lambda_terms[i * self.m + j] {
            q += c * z[zi];
        }
        q
    }

    fn budget_scale(&self) -> f64 {
        let n = self.market.n_buyers().max(1);
        self.market.budgets().iter().sum::<f64>() / n as f64
    }

    /// Smoothed dual value, optionally with gradient and Hessian. Returns
    /// `None` outside the domain (a valued pair priced at or below zero).
    fn eval(
        &self,
        z: &[f64],
        tau: f64,
        rho: f64,
        mut grad: Option<&mut Vec<f64>>,
        mut hess: Option<&mut DMatrix<f64>>,
    ) -> Option<f64> {
        let market = self.market;
        let m = self.m;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        if let Some(h) = hess.as_deref_mut() {
            h.fill(0.0);
        }

        let mut f = 0.0;
        for j in 0..m {
            f += market.supplies()[j] * z[j];
        }
        for k in 0..self.k1 {
            f += self.cs.ineq_rhs()[k] * z[m + k];
        }
        for k in 0..self.k2 {
            f += self.cs.eq_rhs()[k] * z[m + self.k1 + k];
        }
        if let Some(g) = grad.as_deref_mut() {
            for j in 0..m {
                g[j] += market.supplies()[j];
            }
            for k in 0..self.k1 {
                g[m + k] += self.cs.ineq_rhs()[k];
            }
            for k in 0..self.k2 {
                g[m + self.k1 + k] += self.cs.eq_rhs()[k];
            }
        }

        // Scratch reused across buyers.
        let mut q_row = Vec::new();
        let mut scores = Vec::new();
        let mut sigma = Vec::new();
        for i in 0..market.n_buyers() {
            let items = &self.valued_items[i];
            if items.is_empty() {
                continue;
            }
            let b = market.budget(i);
            q_row.clear();
            scores.clear();
            for &j in items {
                let q = self.effective_price(z, i, j);
                if q <= 0.0 {
                    return None;
                }
                q_row.push(q);
                scores.push(market.valuations().get(i, j).ln() - q.ln());
            }
            let m_shift = scores.iter().fold(0.0_f64, |a, s| a.max(*s));
            let e_keep = (-m_shift / tau).exp();
            sigma.clear();
            let mut total = e_keep;
            for &s in &scores {
                let e = ((s - m_shift) / tau).exp();
                sigma.push(e);
                total += e;
            }
            for s in &mut sigma {
                *s /= total;
            }
            f += b * (m_shift + tau * (total.ln()));

            if grad.is_none() && hess.is_none() {
                continue;
            }
            // Smoothed demand x~_ij = B sigma_j / q_j drives both derivatives.
            for (a, &j) in items.iter().enumerate() {
                let x_aj = b * sigma[a] / q_row[a];
                if x_aj == 0.0 {
                    continue;
                }
                if let Some(g) = grad.as_deref_mut() {
                    g[j] -= x_aj;
                    for &(zi, c) in &self.lambda_terms[i * m + j] {
                        g[zi] -= c * x_aj;
                    }
                }
            }
            if let Some(h) = hess.as_deref_mut() {
                for (a, &ja) in items.iter().enumerate() {
                    if sigma[a] == 0.0 {
                        continue;
                    }
                    let ta = 1.0 / q_row[a];
                    for (c_ix, &jc) in items.iter().enumerate().skip(a) {
                        if sigma[c_ix] == 0.0 {
                            continue;
                        }
                        let tc = 1.0 / q_row[c_ix];
                        let mut v = -b * sigma[a] * sigma[c_ix] * ta * tc / tau;
                        if a == c_ix {
                            v += b * sigma[a] * ta * tc / tau + b * sigma[a] * ta * ta;
                        }
                        if v == 0.0 {
                            continue;
                        }
                        // Chain q_ija and q_ijc onto the z coordinates.
                        self.accumulate_pair(h, i, ja, jc, v);
                        if a != c_ix {
                            self.accumulate_pair(h, i, jc, ja, v);
                        }
                    }
                }
            }
        }

        // One-sided quadratic penalties for the sign constraints.
        let penalize = |w: f64, coords: &[(usize, f64)],
                            grad: &mut Option<&mut Vec<f64>>,
                            hess: &mut Option<&mut DMatrix<f64>>|
         -> f64 {
            if w >= 0.0 {
                return 0.0;
            }
            let viol = -w;
            if let Some(g) = grad.as_deref_mut() {
                for &(zi, c) in coords {
                    g[zi] -= rho * viol * c;
                }
            }
            if let Some(h) = hess.as_deref_mut() {
                for &(zi, ci) in coords {
                    for &(zk, ck) in coords {
                        h[(zi, zk)] += rho * ci * ck;
                    }
                }
            }
            0.5 * rho * viol * viol
        };
        for j in 0..m {
            f += penalize(z[j], &[(j, 1.0)], &mut grad, &mut hess);
        }
        for k in 0..self.k1 {
            f += penalize(z[m + k], &[(m + k, 1.0)], &mut grad, &mut hess);
        }
        let mut coords = Vec::new();
        for &(i, j) in &self.guarded_pairs {
            let q = self.effective_price(z, i, j);
            coords.clear();
            coords.push((j, 1.0));
            coords.extend_from_slice(&self.lambda_terms[i * m + j]);
            f += penalize(q, &coords, &mut grad, &mut hess);
        }

        f.is_finite().then_some(f)
    }

    fn accumulate_pair(&self, h: &mut DMatrix<f64>, i: usize, ja: usize, jc: usize, v: f64) {
        // v * dq_a/dz ^ dq_c/dz, exploiting that each q has few terms.
        let m = self.m;
        let ta = &self.lambda_terms[i * m + ja];
        let tc = &self.lambda_terms[i * m + jc];
        h[(ja, jc)] += v;
        for &(zc, cc) in tc {
            h[(ja, zc)] += v * cc;
        }
        for &(za, ca) in ta {
            h[(za, jc)] += v * ca;
            for &(zc, cc) in tc {
                h[(za, zc)] += v * ca * cc;
            }
        }
    }

    /// Starting prices guaranteeing positive effective prices on valued pairs.
    fn initial_point(&self, warm_prices: Option<&[f64]>) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        let scale = self.budget_scale();
        for j in 0..self.m {
            let mut worst_offset = 0.0_f64;
            for i in 0..self.market.n_buyers() {
                if let Some(f) = self.fixed {
                    worst_offset = worst_offset.max(-f.get(i, j));
                }
            }
            z[j] = scale.max(1.0) + worst_offset + 0.5;
        }
        if let Some(warm) = warm_prices {
            for j in 0..self.m.min(warm.len()) {
                // Keep a safe margin inside the domain.
                let mut ok = warm[j].max(0.0);
                for i in 0..self.market.n_buyers() {
                    if self.market.valuations().get(i, j) > NUM_TOL {
                        let offset = self.fixed.map_or(0.0, |f| f.get(i, j));
                        if ok + offset <= 1e-9 {
                            ok = 1e-9 - offset;
                        }
                    }
                }
                z[j] = ok.max(1e-9);
            }
        }
        z
    }
}

/// Converged dual point plus the temperature it was resolved at.
pub(crate) struct DualSolution {
    pub z: Vec<f64>,
    pub tau: f64,
}

/// Minimizes the smoothed dual along the continuation ladder.
pub(crate) fn minimize(
    problem: &DualProblem,
    config: &SolverConfig,
    warm_prices: Option<&[f64]>,
) -> Result<DualSolution, SolveError> {
    let dim = problem.dim;
    let scale = problem.budget_scale();
    let mut z = problem.initial_point(warm_prices);
    let mut budget_left = config.max_iters.max(200);

    let mut grad = vec![0.0; dim];
    let mut hess = DMatrix::zeros(dim, dim);
    let mut final_tau = TAU_LADDER[0] * scale;

    for (stage, tau_rel) in TAU_LADDER.iter().enumerate() {
        let tau = tau_rel * scale;
        let rho = PENALTY_SCALE / tau;
        final_tau = tau;

        if stage == 0 && warm_prices.is_none() {
            warmup(problem, &mut z, tau, rho, config, &mut budget_left);
        }

        let gtol = (1e-3 * tau).max(1e-12 * scale);
        let mut newton_iters = 0;
        loop {
            if newton_iters >= MAX_NEWTON_PER_STAGE || budget_left == 0 {
                break;
            }
            newton_iters += 1;
            budget_left = budget_left.saturating_sub(1);
            let f0 = match problem.eval(&z, tau, rho, Some(&mut grad), Some(&mut hess)) {
                Some(f) => f,
                None => {
                    // Should not happen: iterates stay in the domain. Retreat
                    // to the safe initial point if it does.
                    z = problem.initial_point(None);
                    continue;
                }
            };
            let gnorm = grad.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
            if gnorm <= gtol {
                break;
            }

            let mut mu = 1e-12 * (1.0 + hess.trace() / dim as f64);
            let dir = loop {
                let mut damped = hess.clone();
                for d in 0..dim {
                    damped[(d, d)] += mu;
                }
                match damped.cholesky() {
                    Some(ch) => {
                        let g = DVector::from_column_slice(&grad);
                        break ch.solve(&-g);
                    }
                    None => {
                        mu = (mu * 100.0).max(1e-10);
                        if mu > 1e12 {
                            break -DVector::from_column_slice(&grad);
                        }
                    }
                }
            };

            let slope: f64 = dir
                .iter()
                .zip(&grad)
                .map(|(d, g)| d * g)
                .sum();
            let (dir, slope) = if slope < 0.0 {
                (dir, slope)
            } else {
                let g = DVector::from_column_slice(&grad);
                let s = -g.norm_squared();
                (-g, s)
            };

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..50 {
                let trial: Vec<f64> = z
                    .iter()
                    .zip(dir.iter())
                    .map(|(zi, di)| zi + alpha * di)
                    .collect();
                if let Some(ft) = problem.eval(&trial, tau, rho, None, None) {
                    if ft <= f0 + 1e-4 * alpha * slope {
                        z = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break;
                }
            }
            if !accepted {
                break;
            }
        }
    }

    Ok(DualSolution { z, tau: final_tau })
}

/// Tatonnement warmup: projected steps along the negative dual gradient,
/// which is the smoothed excess demand on prices and the constraint
/// violation on multipliers. Uses the configured schedule, with
/// backtracking only to stay inside the domain.
fn warmup(
    problem: &DualProblem,
    z: &mut Vec<f64>,
    tau: f64,
    rho: f64,
    config: &SolverConfig,
    budget_left: &mut usize,
) {
    let mut grad = vec![0.0; problem.dim];
    for t in 0..WARMUP_STEPS.min(*budget_left) {
        *budget_left = budget_left.saturating_sub(1);
        if problem
            .eval(z, tau, rho, Some(&mut grad), None)
            .is_none()
        {
            return;
        }
        let mut gamma = config.step.step(t);
        for _ in 0..40 {
            let trial: Vec<f64> = z
                .iter()
                .zip(&grad)
                .map(|(zi, gi)| zi - gamma * gi)
                .collect();
            if problem.eval(&trial, tau, rho, None, None).is_some() {
                *z = trial;
                break;
            }
            gamma *= 0.5;
        }
    }
}
