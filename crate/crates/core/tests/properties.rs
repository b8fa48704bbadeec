use std::sync::Arc;

use eti_core::concentration::{a_u, a_u_via_mass, c_a, BorelSubset};
use eti_core::inequalities::{infconv_coefficient, theta, theta_minus_one, EtiParams, InequalityReport};
use eti_core::logspace::{log_add_exp, log_sum_exp};
use eti_core::measures::relative_entropy;
use eti_core::reference::{build_generator, transition_kernel, PotentialSpec};
use eti_core::semigroup::{apply_p, q_values};
use eti_core::transport::{w2, w2_1d, w2_small_lp};
use eti_core::{DiscreteMeasure, GridSpace, ScalarField};
use proptest::prelude::*;

fn grid(n: usize) -> Arc<GridSpace> {
    GridSpace::uniform(-2.0, 2.0, n).unwrap()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0_f64, n).prop_filter("needs mass", |w| w.iter().sum::<f64>() > 1e-3)
}

fn measure(g: &Arc<GridSpace>, w: &[f64]) -> DiscreteMeasure {
    DiscreteMeasure::from_masses(g.clone(), w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn theta_identities(x in 1e-6..40.0_f64, y in 1e-6..40.0_f64) {
        let t = theta(x).unwrap();
        prop_assert!(t >= 1.0 && theta_minus_one(x).unwrap() > 0.0);
        prop_assert!(((t - 1.0) - theta_minus_one(x).unwrap()).abs() <= 1e-12 * t);
        if x < y {
            prop_assert!(theta(y).unwrap() <= t);
        }
    }

    #[test]
    fn log_sum_exp_matches_direct_sum(xs in prop::collection::vec(-30.0..30.0_f64, 1..20)) {
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - direct).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 900.0).collect();
        prop_assert!((log_sum_exp(&shifted) - 900.0 - direct).abs() < 1e-9);
        prop_assert!((log_add_exp(xs[0], xs[0]) - xs[0] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn relative_entropy_is_nonnegative(a in weights(7), b in prop::collection::vec(0.01..1.0_f64, 7)) {
        let g = grid(7);
        let (p, q) = (measure(&g, &a), measure(&g, &b));
        prop_assert!(relative_entropy(&p, &q).unwrap() >= 0.0);
        prop_assert!(relative_entropy(&q, &q).unwrap().abs() < 1e-14);
    }

    #[test]
    fn w2_is_a_metric(a in weights(9), b in weights(9), c in weights(9)) {
        let g = grid(9);
        let (p, q, r) = (measure(&g, &a), measure(&g, &b), measure(&g, &c));
        let (pq, qp) = (w2(&p, &q).unwrap(), w2(&q, &p).unwrap());
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!(w2(&p, &p).unwrap() < 1e-10);
        prop_assert!(pq <= w2(&p, &r).unwrap() + w2(&r, &q).unwrap() + 1e-10);
    }

    #[test]
    fn lp_agrees_with_quantile_coupling(a in weights(12), b in weights(12)) {
        let g = grid(12);
        let (p, q) = (measure(&g, &a), measure(&g, &b));
        prop_assert!((w2_1d(&p, &q).unwrap() - w2_small_lp(&p, &q).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn kernels_are_reversible_markov(values in prop::collection::vec(-2.0..2.0_f64, 6..14), eps in 0.1..2.0_f64, t in 0.01..3.0_f64) {
        let g = grid(values.len());
        let gen = build_generator(&g, &PotentialSpec::Tabulated { values }, eps).unwrap();
        let k = transition_kernel(&gen, t).unwrap();
        prop_assert!(k.row_sum_residual() < 1e-12);
        prop_assert!(k.reversibility_residual() < 1e-12);
        prop_assert!(k.stationarity_residual() < 1e-12);
    }

    #[test]
    fn q_is_squeezed_between_min_and_heat_semigroup(values in prop::collection::vec(-3.0..3.0_f64, 10), eps in 0.05..2.0_f64) {
        let g = grid(10);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, eps).unwrap();
        let k = transition_kernel(&gen, 0.7).unwrap();
        let phi = ScalarField::new(g, values).unwrap();
        let q = q_values(&k, phi.values(), eps).unwrap();
        let p = apply_p(&k, &phi).unwrap();
        for (qv, pv) in q.iter().zip(p.values()) {
            prop_assert!(*qv >= phi.min() - 1e-12);
            prop_assert!(*qv <= pv + 1e-12);
        }
    }

    #[test]
    fn a_u_characterizations_agree(members in prop::collection::vec(any::<bool>(), 16), u in 0.0..10.0_f64) {
        let g = grid(16);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 0.5).unwrap();
        let k = transition_kernel(&gen, 1.0).unwrap();
        let a = BorelSubset::new(g, members).unwrap();
        let via_cost = a_u(&k, &a, u).unwrap();
        prop_assert_eq!(&via_cost, &a_u_via_mass(&k, &a, u).unwrap());
        // A_u grows with u, and c_A is nonnegative.
        prop_assert!(via_cost.is_subset_of(&a_u(&k, &a, u + 1.0).unwrap()));
        prop_assert!(c_a(&k, &a).unwrap().iter().all(|c| *c >= -1e-12));
    }

    #[test]
    fn report_flag_matches_slack(lhs in -5.0..5.0_f64, rhs in -5.0..5.0_f64, tol in 0.0..0.5_f64) {
        let p = EtiParams::new(1.0, 1.0, 0.5, 1.0).unwrap();
        let r = InequalityReport::new("x", p, lhs, rhs, tol, 1);
        prop_assert_eq!(r.satisfied, r.slack >= -tol);
        prop_assert!((r.slack - (rhs - lhs)).abs() < 1e-15);
    }

    #[test]
    fn infconv_coefficient_exceeds_one(lambda in 0.1..5.0_f64, eps in 0.05..3.0_f64, t in 0.1..3.0_f64) {
        let p = EtiParams::new(lambda, eps, 0.5 * t, t).unwrap();
        match infconv_coefficient(&p) {
            Some(k) => prop_assert!(k > 1.0 && (lambda * eps * t).exp() > 1.0 + eps),
            None => prop_assert!((lambda * eps * t).exp_m1() <= eps),
        }
    }
}
