//! Exact refinement of the equilibrium from its active structure.
//!
//! The smoothed dual identifies which items each buyer spends on, whether
//! the buyer keeps leftover money, which items carry positive prices, and
//! which inequality constraints bind. Holding that structure fixed, the
//! remaining optimality conditions are a square-ish nonlinear system
//! (stationarity, budget balance, clearing, active constraints) that a few
//! damped Gauss-Newton steps solve to machine precision. A refinement is
//! only accepted if it reproduces a valid equilibrium: nonnegative
//! quantities, no constraint drift, and no buyer preferring a skipped item.

use nalgebra::{DMatrix, DVector};

use crate::constraints::Multipliers;
use crate::market::NUM_TOL;
use crate::mat::Mat;

use super::dual::{DualProblem, DualSolution};
use super::Candidate;

/// Relative window for bang-per-buck ties.
pub(crate) const TIE_REL: f64 = 1e-7;
/// Prices and multipliers below this (times the dual scale) are pinned to zero.
pub(crate) const PIN_TOL: f64 = 1e-7;
/// Zero-value pairs with |q| below this count as free-disposal pairs.
pub(crate) const ZERO_Q_TOL: f64 = 1e-6;

const MAX_GN_ITERS: usize = 40;
const ACCEPT_RES: f64 = 1e-9;
const CHECK_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub(crate) struct Structure {
    /// Per buyer: items in the maximal bang-per-buck set.
    pub argmax: Vec<Vec<usize>>,
    /// Buyer may hold leftover money (ratio tied with or below one).
    pub delta_active: Vec<bool>,
    /// Zero-value pairs with effectively zero price; quantity is free.
    pub zero_pairs: Vec<(usize, usize)>,
    /// Items whose price is positive and must therefore clear.
    pub free_price: Vec<bool>,
    /// Inequality rows with positive multipliers, forced tight.
    pub active_ineq: Vec<bool>,
    /// Some valued pair has effective price ~0: no bounded demand.
    pub saturating: bool,
}

pub(crate) fn clamp_signs(problem: &DualProblem, z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    for j in 0..problem.m {
        out[j] = out[j].max(0.0);
    }
    for k in 0..problem.k1 {
        out[problem.m + k] = out[problem.m + k].max(0.0);
    }
    out
}

pub(crate) fn dual_scale(z: &[f64]) -> f64 {
    z.iter().fold(1.0_f64, |a, v| a.max(v.abs()))
}

pub(crate) fn detect(problem: &DualProblem, z: &[f64]) -> Structure {
    let market = problem.market;
    let n = market.n_buyers();
    let m = problem.m;
    let scale = dual_scale(z);
    let pin = PIN_TOL * scale;
    let zero_q = ZERO_Q_TOL * scale;

    let mut argmax = vec![Vec::new(); n];
    let mut delta_active = vec![true; n];
    let mut saturating = false;
    for i in 0..n {
        let items = &problem.valued_items[i];
        if items.is_empty() {
            continue;
        }
        let mut best = 0.0_f64;
        for &j in items {
            let q = problem.effective_price(z, i, j);
            if q <= NUM_TOL {
                saturating = true;
                continue;
            }
            best = best.max(market.valuations().get(i, j) / q);
        }
        let r = best.max(1.0);
        let cut = r * (1.0 - TIE_REL);
        for &j in items {
            let q = problem.effective_price(z, i, j);
            if q > NUM_TOL && market.valuations().get(i, j) / q >= cut {
                argmax[i].push(j);
            }
        }
        delta_active[i] = 1.0 >= cut;
    }

    let mut zero_pairs = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if market.valuations().get(i, j) <= NUM_TOL {
                let q = problem.effective_price(z, i, j);
                if q.abs() <= zero_q {
                    zero_pairs.push((i, j));
                }
            }
        }
    }

    let free_price = (0..m).map(|j| z[j] > pin).collect();
    let active_ineq = (0..problem.k1).map(|k| z[m + k] > pin).collect();

    Structure {
        argmax,
        delta_active,
        zero_pairs,
        free_price,
        active_ineq,
        saturating,
    }
}

/// Smoothed per-buyer budget shares at the final temperature; used to seed
/// the quantity unknowns.
fn smoothed_demand(problem: &DualProblem, z: &[f64], tau: f64) -> Mat {
    let market = problem.market;
    let mut x = Mat::zeros(market.n_buyers(), problem.m);
    for i in 0..market.n_buyers() {
        let items = &problem.valued_items[i];
        if items.is_empty() {
            continue;
        }
        let scores: Vec<f64> = items
            .iter()
            .map(|&j| {
                let q = problem.effective_price(z, i, j).max(1e-300);
                market.valuations().get(i, j).ln() - q.ln()
            })
            .collect();
        let shift = scores.iter().fold(0.0_f64, |a, s| a.max(*s));
        let mut total = (-shift / tau).exp();
        let weights: Vec<f64> = scores
            .iter()
            .map(|s| {
                let e = ((s - shift) / tau).exp();
                total += e;
                e
            })
            .collect();
        for (w, &j) in weights.iter().zip(items) {
            let q = problem.effective_price(z, i, j);
            if q > NUM_TOL {
                x.set(i, j, market.budget(i) * (w / total) / q);
            }
        }
    }
    x
}

pub(crate) fn refine(problem: &DualProblem, duals: &DualSolution) -> Option<Candidate> {
    let z = clamp_signs(problem, &duals.z);
    let structure = detect(problem, &z);
    if structure.saturating {
        return None;
    }
    let seed_x = smoothed_demand(problem, &z, duals.tau);
    gauss_newton(problem, &z, &structure, &seed_x, None)
}

/// Refinement seeded by a repaired allocation: the LP's support replaces
/// the smoothed argmax sets, which resolves degenerate ties.
pub(crate) fn refine_from_support(
    problem: &DualProblem,
    duals: &DualSolution,
    repaired: &Candidate,
) -> Option<Candidate> {
    let market = problem.market;
    let n = market.n_buyers();
    let z = clamp_signs(problem, &duals.z);
    let base = detect(problem, &z);
    if base.saturating {
        return None;
    }
    let mut argmax = vec![Vec::new(); n];
    let mut zero_pairs = Vec::new();
    for i in 0..n {
        for j in 0..problem.m {
            if repaired.x.get(i, j) > 1e-9 {
                if market.valuations().get(i, j) > NUM_TOL {
                    argmax[i].push(j);
                } else {
                    zero_pairs.push((i, j));
                }
            }
        }
    }
    let delta_active = (0..n)
        .map(|i| base.delta_active[i] || repaired.delta[i] > 1e-9)
        .collect();
    let structure = Structure {
        argmax,
        delta_active,
        zero_pairs,
        free_price: base.free_price,
        active_ineq: base.active_ineq,
        saturating: false,
    };
    gauss_newton(problem, &z, &structure, &repaired.x, Some(&repaired.delta))
}

struct Layout {
    price_ix: Vec<Option<usize>>,
    ineq_ix: Vec<Option<usize>>,
    eq_ix: Vec<usize>,
    u_ix: Vec<Option<usize>>,
    pair_ix: Vec<Vec<(usize, usize)>>, // per buyer: (item, w index)
    delta_ix: Vec<Option<usize>>,
    dim: usize,
}

fn build_layout(problem: &DualProblem, s: &Structure) -> Layout {
    let n = problem.market.n_buyers();
    let mut dim = 0;
    let mut price_ix = vec![None; problem.m];
    for j in 0..problem.m {
        if s.free_price[j] {
            price_ix[j] = Some(dim);
            dim += 1;
        }
    }
    let mut ineq_ix = vec![None; problem.k1];
    for k in 0..problem.k1 {
        if s.active_ineq[k] {
            ineq_ix[k] = Some(dim);
            dim += 1;
        }
    }
    let eq_ix: Vec<usize> = (0..problem.k2)
        .map(|_| {
            let ix = dim;
            dim += 1;
            ix
        })
        .collect();
    let mut u_ix = vec![None; n];
    for i in 0..n {
        if !s.delta_active[i] {
            u_ix[i] = Some(dim);
            dim += 1;
        }
    }
    let mut pair_ix = vec![Vec::new(); n];
    for i in 0..n {
        for &j in &s.argmax[i] {
            pair_ix[i].push((j, dim));
            dim += 1;
        }
    }
    for &(i, j) in &s.zero_pairs {
        if !pair_ix[i].iter().any(|&(jj, _)| jj == j) {
            pair_ix[i].push((j, dim));
            dim += 1;
        }
    }
    let mut delta_ix = vec![None; n];
    for i in 0..n {
        if s.delta_active[i] {
            delta_ix[i] = Some(dim);
            dim += 1;
        }
    }
    Layout {
        price_ix,
        ineq_ix,
        eq_ix,
        u_ix,
        pair_ix,
        delta_ix,
        dim,
    }
}

/// Effective price of a pair under the layout: value and sparse gradient.
fn q_terms(
    problem: &DualProblem,
    layout: &Layout,
    w: &[f64],
    i: usize,
    j: usize,
) -> (f64, Vec<(usize, f64)>) {
    let mut q = problem.fixed.map_or(0.0, |f| f.get(i, j));
    let mut coords = Vec::new();
    if let Some(ix) = layout.price_ix[j] {
        q += w[ix];
        coords.push((ix, 1.0));
    }
    for &(zi, c) in &problem.lambda_terms[i * problem.m + j] {
        if zi < problem.m + problem.k1 {
            let k = zi - problem.m;
            if let Some(ix) = layout.ineq_ix[k] {
                q += c * w[ix];
                coords.push((ix, c));
            }
        } else {
            let k = zi - problem.m - problem.k1;
            let ix = layout.eq_ix[k];
            q += c * w[ix];
            coords.push((ix, c));
        }
    }
    (q, coords)
}

fn residuals(
    problem: &DualProblem,
    layout: &Layout,
    s: &Structure,
    w: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let market = problem.market;
    let n = market.n_buyers();
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();

    let u_of = |i: usize, w: &[f64]| match layout.u_ix[i] {
        Some(ix) => (w[ix], Some(ix)),
        None => (market.budget(i), None),
    };
    let delta_of = |i: usize, w: &[f64]| match layout.delta_ix[i] {
        Some(ix) => (w[ix], Some(ix)),
        None => (0.0, None),
    };

    for i in 0..n {
        let (u, u_ix) = u_of(i, w);
        // Stationarity with equality on the spending set.
        for &j in &s.argmax[i] {
            let (q, coords) = q_terms(problem, layout, w, i, j);
            let v = market.valuations().get(i, j);
            let mut jac: Vec<(usize, f64)> =
                coords.iter().map(|&(ix, c)| (ix, c * u)).collect();
            if let Some(ix) = u_ix {
                jac.push((ix, q));
            }
            rows.push((q * u - v * market.budget(i), jac));
        }
        // Utility definition and budget balance.
        let (delta, d_ix) = delta_of(i, w);
        let mut r_u = u - delta;
        let mut jac_u: Vec<(usize, f64)> = Vec::new();
        if let Some(ix) = u_ix {
            jac_u.push((ix, 1.0));
        }
        if let Some(ix) = d_ix {
            jac_u.push((ix, -1.0));
        }
        let mut r_b = delta - market.budget(i);
        let mut jac_b: Vec<(usize, f64)> = Vec::new();
        if let Some(ix) = d_ix {
            jac_b.push((ix, 1.0));
        }
        for &(j, x_ix) in &layout.pair_ix[i] {
            let v = market.valuations().get(i, j);
            let x = w[x_ix];
            r_u -= v * x;
            jac_u.push((x_ix, -v));
            let (q, coords) = q_terms(problem, layout, w, i, j);
            r_b += q * x;
            jac_b.push((x_ix, q));
            for &(ix, c) in &coords {
                jac_b.push((ix, c * x));
            }
        }
        rows.push((r_u, jac_u));
        rows.push((r_b, jac_b));
    }

    // Positive prices clear their items.
    for j in 0..problem.m {
        if !s.free_price[j] {
            continue;
        }
        let mut r = -market.supplies()[j];
        let mut jac = Vec::new();
        for i in 0..n {
            for &(jj, x_ix) in &layout.pair_ix[i] {
                if jj == j {
                    r += w[x_ix];
                    jac.push((x_ix, 1.0));
                }
            }
        }
        rows.push((r, jac));
    }

    // Active inequalities are tight; equalities always hold.
    for k in 0..problem.k1 {
        if !s.active_ineq[k] {
            continue;
        }
        let mut r = -problem.cs.ineq_rhs()[k];
        let mut jac = Vec::new();
        for t in problem.cs.ineq_terms().iter().filter(|t| t.row == k) {
            if let Some(&(_, x_ix)) = layout.pair_ix[t.buyer]
                .iter()
                .find(|&&(jj, _)| jj == t.item)
            {
                r += t.coef * w[x_ix];
                jac.push((x_ix, t.coef));
            }
        }
        rows.push((r, jac));
    }
    for k in 0..problem.k2 {
        let mut r = -problem.cs.eq_rhs()[k];
        let mut jac = Vec::new();
        for t in problem.cs.eq_terms().iter().filter(|t| t.row == k) {
            if let Some(&(_, x_ix)) = layout.pair_ix[t.buyer]
                .iter()
                .find(|&&(jj, _)| jj == t.item)
            {
                r += t.coef * w[x_ix];
                jac.push((x_ix, t.coef));
            }
        }
        rows.push((r, jac));
    }

    // Zero-value pairs carried in the solution must be exactly free.
    for &(i, j) in &s.zero_pairs {
        let (q, coords) = q_terms(problem, layout, w, i, j);
        rows.push((q, coords));
    }

    let mut r = DVector::zeros(rows.len());
    let mut jac = DMatrix::zeros(rows.len(), layout.dim);
    for (row, (val, coords)) in rows.into_iter().enumerate() {
        r[row] = val;
        for (ix, c) in coords {
            jac[(row, ix)] += c;
        }
    }
    (r, jac)
}

fn gauss_newton(
    problem: &DualProblem,
    z: &[f64],
    s: &Structure,
    seed_x: &Mat,
    seed_delta: Option<&[f64]>,
) -> Option<Candidate> {
    let market = problem.market;
    let n = market.n_buyers();
    let layout = build_layout(problem, s);
    if layout.dim == 0 {
        return finish(problem, s, &layout, &[]);
    }

    let mut w = vec![0.0; layout.dim];
    for j in 0..problem.m {
        if let Some(ix) = layout.price_ix[j] {
            w[ix] = z[j];
        }
    }
    for k in 0..problem.k1 {
        if let Some(ix) = layout.ineq_ix[k] {
            w[ix] = z[problem.m + k];
        }
    }
    for k in 0..problem.k2 {
        w[layout.eq_ix[k]] = z[problem.m + problem.k1 + k];
    }
    for i in 0..n {
        if let Some(ix) = layout.u_ix[i] {
            let mut best = 1.0_f64;
            for &j in &problem.valued_items[i] {
                let q = problem.effective_price(z, i, j);
                if q > NUM_TOL {
                    best = best.max(market.valuations().get(i, j) / q);
                }
            }
            w[ix] = market.budget(i) * best;
        }
        let mut spend = 0.0;
        for &(j, x_ix) in &layout.pair_ix[i] {
            w[x_ix] = seed_x.get(i, j);
            spend += problem.effective_price(z, i, j) * seed_x.get(i, j);
        }
        if let Some(ix) = layout.delta_ix[i] {
            w[ix] = match seed_delta {
                Some(d) => d[i],
                None => (market.budget(i) - spend).clamp(0.0, market.budget(i)),
            };
        }
    }

    let scale = dual_scale(z).max(
        market
            .budgets()
            .iter()
            .fold(0.0_f64, |a, b| a.max(*b)),
    );
    let (mut r, mut jac) = residuals(problem, &layout, s, &w);
    let mut rnorm = r.amax();
    for _ in 0..MAX_GN_ITERS {
        if rnorm <= 1e-13 * scale {
            break;
        }
        let svd = jac.clone().svd(true, true);
        let sv_max = svd.singular_values.max();
        let eps = (sv_max * 1e-12).max(1e-300);
        let step = svd.solve(&(-&r), eps).ok()?;
        let mut improved = false;
        let mut alpha = 1.0;
        for _ in 0..12 {
            let trial: Vec<f64> = w
                .iter()
                .zip(step.iter())
                .map(|(wi, si)| wi + alpha * si)
                .collect();
            let (rt, jt) = residuals(problem, &layout, s, &trial);
            let nt = rt.amax();
            if nt < rnorm * (1.0 - 1e-4 * alpha) || nt <= 1e-13 * scale {
                w = trial;
                r = rt;
                jac = jt;
                rnorm = nt;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if rnorm > ACCEPT_RES * scale {
        return None;
    }
    finish(problem, s, &layout, &w)
}

/// Validates the refined point as an equilibrium and packages it.
fn finish(
    problem: &DualProblem,
    s: &Structure,
    layout: &Layout,
    w: &[f64],
) -> Option<Candidate> {
    let market = problem.market;
    let n = market.n_buyers();
    let m = problem.m;
    let tol = CHECK_TOL * dual_scale(w);

    let prices: Vec<f64> = (0..m)
        .map(|j| layout.price_ix[j].map_or(0.0, |ix| w[ix]))
        .collect();
    let l1: Vec<f64> = (0..problem.k1)
        .map(|k| layout.ineq_ix[k].map_or(0.0, |ix| w[ix]))
        .collect();
    let l2: Vec<f64> = (0..problem.k2).map(|k| w[layout.eq_ix[k]]).collect();
    if prices.iter().any(|p| *p < -tol || !p.is_finite())
        || l1.iter().any(|v| *v < -tol || !v.is_finite())
        || l2.iter().any(|v| !v.is_finite())
    {
        return None;
    }

    let mut x = Mat::zeros(n, m);
    let mut delta = vec![0.0; n];
    for i in 0..n {
        for &(j, x_ix) in &layout.pair_ix[i] {
            if w[x_ix] < -tol || !w[x_ix].is_finite() {
                return None;
            }
            x.set(i, j, w[x_ix].max(0.0));
        }
        if let Some(ix) = layout.delta_ix[i] {
            if w[ix] < -tol || !w[ix].is_finite() {
                return None;
            }
            delta[i] = w[ix].max(0.0);
        }
    }

    // No buyer may strictly prefer an item outside its spending set, items
    // without the clearing equation must not oversell, and inactive
    // inequalities must still hold.
    let z_full: Vec<f64> = prices
        .iter()
        .copied()
        .chain(l1.iter().copied())
        .chain(l2.iter().copied())
        .collect();
    for i in 0..n {
        let (u, _) = match layout.u_ix[i] {
            Some(ix) => (w[ix], ()),
            None => (market.budget(i), ()),
        };
        if !(u > 0.0) {
            return None;
        }
        for j in 0..m {
            let v = market.valuations().get(i, j);
            if v <= NUM_TOL {
                continue;
            }
            let q = problem.effective_price(&z_full, i, j);
            let mu = q - v * market.budget(i) / u;
            if mu < -1e-7 {
                return None;
            }
        }
    }
    for j in 0..m {
        if !s.free_price[j] && x.col_sum(j) > market.supplies()[j] + tol {
            return None;
        }
    }
    for k in 0..problem.k1 {
        if !s.active_ineq[k] {
            let mut lhs = 0.0;
            for t in problem.cs.ineq_terms().iter().filter(|t| t.row == k) {
                lhs += t.coef * x.get(t.buyer, t.item);
            }
            if lhs > problem.cs.ineq_rhs()[k] + 1e-7 {
                return None;
            }
        }
    }

    Some(Candidate {
        x,
        delta,
        prices,
        mult: Multipliers { ineq: l1, eq: l2 },
    })
}
