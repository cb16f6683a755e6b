//! Property tests for the demand oracle, constraint operators, and audit
//! certificates.

use std::collections::BTreeSet;

use proptest::prelude::*;

use fairmarket::audit::{buyer_pareto_gap, solve_lp, LinearProgram, LpOutcome};
use fairmarket::constraints::{
    build_aef, build_pbp, build_pip, evaluate_constraints, interventions_from_multipliers,
    LinearConstraintSet, Multipliers,
};
use fairmarket::market::{demand_response, linear_utility, DemandResponse, TIE_TOL};
use fairmarket::{Market, Mat};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per buyer, the returned bundle beats ten thousand random affordable
/// bundles, up to the tie window.
#[test]
fn demand_beats_random_affordable_bundles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..8 {
        let m = rng.gen_range(2..5);
        let values: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
        let prices: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
        let budget = rng.gen_range(0.5..2.0);
        let DemandResponse::Bounded(bundle) =
            demand_response(&values, budget, &prices, TIE_TOL).unwrap()
        else {
            panic!("prices are positive, demand must be bounded");
        };
        let best = budget * bundle.bang_per_buck.max(1.0);
        for _ in 0..10_000 {
            // Random affordable bundle: random spend split plus leftover.
            let mut weights: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let keep = rng.gen_range(0.0..1.0);
            let total: f64 = weights.iter().sum::<f64>() + keep;
            for w in &mut weights {
                *w = *w / total * budget;
            }
            let leftover = keep / total * budget;
            let x: Vec<f64> = weights
                .iter()
                .zip(&prices)
                .map(|(spend, p)| spend / p)
                .collect();
            let u = linear_utility(&values, &x, leftover).unwrap();
            assert!(
                best >= u - 10.0 * TIE_TOL,
                "demand utility {best} beaten by random bundle {u}"
            );
        }
    }
}

/// For linear utilities the bundle value equals the gradient inner product
/// exactly (degree-one homogeneity).
#[test]
fn value_is_gradient_times_bundle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let m = rng.gen_range(1..6);
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5.0)).collect();
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0)).collect();
        let direct: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
        let through_op = linear_utility(&v, &x, 0.0).unwrap();
        assert_eq!(direct, through_op);
    }
}

fn small_cs() -> LinearConstraintSet {
    let mut cs = LinearConstraintSet::empty(3, 3);
    cs.push_eq(&[(0, 0, 1.0), (0, 1, -1.0)], 0.0, "parity").unwrap();
    cs.push_eq(&[(1, 0, 1.0), (1, 2, -2.0)], 0.1, "weighted").unwrap();
    cs.push_ineq(&[(2, 0, -1.0), (2, 1, -1.0)], -0.4, "floor").unwrap();
    cs
}

proptest! {
    /// Residual evaluation is affine: residual(x+y) = residual(x) +
    /// residual(y) + b (the rhs is subtracted twice on the left).
    #[test]
    fn constraint_evaluation_is_affine(
        xs in proptest::collection::vec(0.0_f64..2.0, 9),
        ys in proptest::collection::vec(0.0_f64..2.0, 9),
    ) {
        let cs = small_cs();
        let x = Mat::from_rows(&[xs[0..3].to_vec(), xs[3..6].to_vec(), xs[6..9].to_vec()]);
        let y = Mat::from_rows(&[ys[0..3].to_vec(), ys[3..6].to_vec(), ys[6..9].to_vec()]);
        let sum = x.add_scaled(&y, 1.0);
        let rx = evaluate_constraints(&cs, &x);
        let ry = evaluate_constraints(&cs, &y);
        let rsum = evaluate_constraints(&cs, &sum);
        for k in 0..cs.n_eq() {
            let expected = rx.eq[k] + ry.eq[k] + cs.eq_rhs()[k];
            prop_assert!((rsum.eq[k] - expected).abs() < 1e-12);
        }
        for k in 0..cs.n_ineq() {
            let expected = rx.ineq[k] + ry.ineq[k] + cs.ineq_rhs()[k];
            prop_assert!((rsum.ineq[k] - expected).abs() < 1e-12);
        }
    }

    /// The multiplier-to-intervention map is linear in the multipliers.
    #[test]
    fn interventions_linear_in_multipliers(
        a in proptest::collection::vec(0.0_f64..2.0, 3),
        b in proptest::collection::vec(0.0_f64..2.0, 3),
        scale in 0.0_f64..3.0,
    ) {
        let cs = small_cs();
        let mult_a = Multipliers { ineq: vec![a[0]], eq: vec![a[1], a[2]] };
        let mult_b = Multipliers { ineq: vec![b[0]], eq: vec![b[1], b[2]] };
        let combined = Multipliers {
            ineq: vec![a[0] + scale * b[0]],
            eq: vec![a[1] + scale * b[1], a[2] + scale * b[2]],
        };
        let pa = interventions_from_multipliers(&cs, &mult_a).unwrap();
        let pb = interventions_from_multipliers(&cs, &mult_b).unwrap();
        let pc = interventions_from_multipliers(&cs, &combined).unwrap();
        let expected = pa.add_scaled(&pb, scale);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((pc.get(i, j) - expected.get(i, j)).abs() < 1e-12);
            }
        }
    }
}

/// Intervention structure per family: parity rows tax one side and
/// subsidize the other in proportion alpha; floors are a uniform subsidy
/// on the protected block.
#[test]
fn intervention_structure_per_family() {
    let market = Market::new(
        vec![1.0; 4],
        Mat::from_rows(&[
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ]),
    )
    .unwrap();

    // Per-buyer parity with alpha = 2: +l on the A item, -2l on B items.
    let cs = build_pbp(
        &market,
        &BTreeSet::from([1]),
        &BTreeSet::from([0]),
        &BTreeSet::from([1, 2]),
        2.0,
    )
    .unwrap();
    let p = interventions_from_multipliers(
        &cs,
        &Multipliers {
            ineq: vec![],
            eq: vec![0.3],
        },
    )
    .unwrap();
    assert_eq!(p.row(1), &[0.3, -0.6, -0.6]);
    for i in [0, 2, 3] {
        assert!(p.row(i).iter().all(|v| *v == 0.0));
    }

    // Per-item parity: +l for A-group buyers, -l for B-group buyers on the
    // constrained item only.
    let cs = build_pip(
        &market,
        &BTreeSet::from([2]),
        &BTreeSet::from([0, 1]),
        &BTreeSet::from([2, 3]),
        1.0,
    )
    .unwrap();
    let p = interventions_from_multipliers(
        &cs,
        &Multipliers {
            ineq: vec![],
            eq: vec![0.5],
        },
    )
    .unwrap();
    for i in 0..2 {
        assert_eq!(p.get(i, 2), 0.5);
    }
    for i in 2..4 {
        assert_eq!(p.get(i, 2), -0.5);
    }
    for j in 0..2 {
        for i in 0..4 {
            assert_eq!(p.get(i, j), 0.0);
        }
    }

    // Floor: one uniform subsidy on the constrained-by-protected block.
    let cs = build_aef(
        &market,
        &BTreeSet::from([0, 1]),
        &BTreeSet::from([1, 2]),
        0.5,
    )
    .unwrap();
    let p = interventions_from_multipliers(
        &cs,
        &Multipliers {
            ineq: vec![0.7],
            eq: vec![],
        },
    )
    .unwrap();
    for i in 0..2 {
        assert_eq!(p.get(i, 1), -0.7);
        assert_eq!(p.get(i, 2), -0.7);
        assert_eq!(p.get(i, 0), 0.0);
    }
    for i in 2..4 {
        assert!(p.row(i).iter().all(|v| *v == 0.0));
    }
}

/// A positive Pareto gap always comes with a certificate that satisfies
/// every program row by substitution.
#[test]
fn gap_certificates_substitute_cleanly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut positive_gaps = 0;
    for _ in 0..30 {
        let n = 3;
        let m = 3;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let market = Market::new(vec![1.0; n], Mat::from_rows(&rows)).unwrap();
        // Deliberately inefficient baseline: equal split everywhere.
        let third = 1.0 / n as f64;
        let baseline = Mat::from_rows(&vec![vec![third; m]; n]);
        let report = buyer_pareto_gap(&market, &baseline).unwrap();
        if report.gap > 1e-9 {
            positive_gaps += 1;
            let cert = report.certificate.expect("positive gap carries certificate");
            for j in 0..m {
                assert!(cert.col_sum(j) <= 1.0 + 1e-7, "supply row violated");
            }
            for i in 0..n {
                let base_u: f64 = rows[i].iter().zip(baseline.row(i)).map(|(v, x)| v * x).sum();
                let cert_u: f64 = rows[i].iter().zip(cert.row(i)).map(|(v, x)| v * x).sum();
                assert!(cert_u >= base_u - 1e-7, "utility floor violated");
            }
        }
    }
    assert!(positive_gaps > 10, "equal splits should usually be improvable");
}

/// Two algebraic routes to the same optimum: the simplex value equals the
/// hand-derived optimum on a transport-like program.
#[test]
fn simplex_agrees_with_closed_form() {
    // max 3a + 2b st a + b <= 1, a <= 0.4: optimum 3(0.4) + 2(0.6) = 2.4.
    let mut lp = LinearProgram::new(vec![3.0, 2.0]);
    lp.less_equal(vec![1.0, 1.0], 1.0);
    lp.less_equal(vec![1.0, 0.0], 0.4);
    match solve_lp(&lp).unwrap() {
        LpOutcome::Optimal { value, .. } => assert!((value - 2.4).abs() < 1e-9),
        other => panic!("unexpected {other:?}"),
    }
}
