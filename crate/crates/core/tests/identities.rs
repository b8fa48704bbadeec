//! Structural identities of the reference kernel, the semigroups and the
//! Schrödinger problem on seeded random instances.

use std::sync::Arc;

use eti_core::measures::relative_entropy;
use eti_core::reference::{build_generator, ou_closed_form, product_kernel, transition_kernel, PotentialSpec};
use eti_core::sampling::{random_measure, smooth_field};
use eti_core::schrodinger::{
    dual_value, entropic_cost, forward_cost, ipfp, optimal_dual_potential, transport_cost, IpfpOptions,
};
use eti_core::semigroup::{q_nested, q_values};
use eti_core::{DiscreteMeasure, Generator, GridSpace, ReferenceKernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gaussian(n: usize, eps: f64) -> (Arc<GridSpace>, Generator) {
    let pot = PotentialSpec::Quadratic { lambda: 1.0 };
    let (lo, hi) = pot.default_domain().unwrap();
    let g = GridSpace::uniform(lo, hi, n).unwrap();
    let gen = build_generator(&g, &pot, eps).unwrap();
    (g, gen)
}

fn pairs(m: &DiscreteMeasure, count: usize, seed: u64) -> Vec<(DiscreteMeasure, DiscreteMeasure)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (random_measure(&mut rng, m, 1.0).unwrap(), random_measure(&mut rng, m, 1.0).unwrap()))
        .collect()
}

fn max_log_diff(a: &ReferenceKernel, b: &ReferenceKernel) -> f64 {
    a.linear().max_abs_diff(&b.linear())
}

#[test]
fn cost_decomposes_into_entropy_and_forward_cost() {
    let (_, gen) = gaussian(64, 1.0);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    for (mu, nu) in pairs(&m, 20, 1) {
        let sol = ipfp(&k, &mu, &nu, &IpfpOptions::default()).unwrap();
        let t = entropic_cost(&sol).unwrap();
        let fwd = forward_cost(&sol, &mu, &k).unwrap();
        let h = relative_entropy(&mu, &m).unwrap();
        assert!((t - h - fwd).abs() <= 1e-8, "{t} {h} {fwd}");
    }
}

#[test]
fn cost_is_symmetric() {
    let (_, gen) = gaussian(64, 1.0);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    for (mu, nu) in pairs(&m, 20, 1) {
        let a = transport_cost(&k, &mu, &nu).unwrap();
        let b = transport_cost(&k, &nu, &mu).unwrap();
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn time_change_and_semigroup_property() {
    let (_, gen) = gaussian(48, 0.5);
    let unit = gen.with_epsilon(1.0).unwrap();
    for t in [0.3, 1.0, 2.5] {
        let a = transition_kernel(&gen, t).unwrap();
        let b = transition_kernel(&unit, 0.5 * t).unwrap();
        assert!(max_log_diff(&a, &b) <= 1e-10);
    }
    let (s, t) = (0.4, 0.9);
    let ks = transition_kernel(&gen, s).unwrap().linear();
    let kt = transition_kernel(&gen, t).unwrap().linear();
    let kst = transition_kernel(&gen, s + t).unwrap().linear();
    assert!(ks.matmul(&kt).max_abs_diff(&kst) <= 1e-10);
}

#[test]
fn scaled_cost_grows_with_horizon() {
    let (_, gen) = gaussian(48, 1.0);
    let ladder = [0.25, 0.5, 1.0, 2.0, 4.0];
    let kernels: Vec<ReferenceKernel> = ladder.iter().map(|t| transition_kernel(&gen, *t).unwrap()).collect();
    let m = gen.stationary().clone();
    for (mu, nu) in pairs(&m, 10, 5) {
        let scaled: Vec<f64> = kernels
            .iter()
            .zip(ladder)
            .map(|(k, t)| t * transport_cost(k, &mu, &nu).unwrap())
            .collect();
        for w in scaled.windows(2) {
            assert!(w[1] - w[0] >= -1e-8, "{scaled:?}");
        }
    }
}

#[test]
fn kantorovich_duality() {
    let (g, gen) = gaussian(64, 0.5);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mu, nu) = pairs(&m, 1, 9).remove(0);
    let sol = ipfp(&k, &mu, &nu, &IpfpOptions::default()).unwrap();
    // eps T = eps H(mu|m) + sup_phi { mu(Q phi) - nu(phi) }.
    let target = 0.5 * (entropic_cost(&sol).unwrap() - relative_entropy(&mu, &m).unwrap());
    for _ in 0..100 {
        let phi = smooth_field(&mut rng, &g, 3.0, false).unwrap();
        assert!(dual_value(&k, &mu, &nu, &phi, 0.5).unwrap() <= target + 1e-10);
    }
    let star = optimal_dual_potential(&sol, &k, 0.5).unwrap();
    let gap = target - dual_value(&k, &mu, &nu, &star, 0.5).unwrap();
    assert!(gap.abs() <= 1e-6, "{gap}");
}

#[test]
fn nested_semigroup_on_product_grid() {
    let (g1, gen1) = gaussian(12, 0.7);
    let (_, gen2) = gaussian(10, 0.7);
    let k1 = transition_kernel(&gen1, 0.8).unwrap();
    let k2 = transition_kernel(&gen2, 0.8).unwrap();
    let k = product_kernel(&k1, &k2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let phi = smooth_field(&mut rng, k.space(), 2.0, true).unwrap();
    let direct = q_values(&k, phi.values(), 0.7).unwrap();
    let nested = q_nested(&k1, &k2, phi.values(), 0.7).unwrap();
    for (a, b) in direct.iter().zip(&nested) {
        assert!((a - b).abs() <= 1e-10);
    }
    // Separable fields split into per-factor semigroups.
    let f1 = smooth_field(&mut rng, &g1, 1.0, false).unwrap();
    let f2: Vec<f64> = (0..10).map(|j| (j as f64 * 0.3).sin()).collect();
    let sep: Vec<f64> = (0..120).map(|i| f1.values()[i / 10] + f2[i % 10]).collect();
    let q = q_values(&k, &sep, 0.7).unwrap();
    let q1 = q_values(&k1, f1.values(), 0.7).unwrap();
    let q2 = q_values(&k2, &f2, 0.7).unwrap();
    for i in 0..120 {
        assert!((q[i] - q1[i / 10] - q2[i % 10]).abs() <= 1e-10);
    }
}

#[test]
fn discrete_kernel_approaches_ornstein_uhlenbeck() {
    let (g, gen) = gaussian(256, 1.0);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let ou = ou_closed_form(&g, 1.0, 1.0, 1.0).unwrap();
    let (a, b) = (k.linear(), ou.linear());
    let tv = (0..256)
        .filter(|i| (64..192).contains(i))
        .map(|i| 0.5 * a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    assert!(tv < 0.02, "{tv}");
}

/// The IPFP dual objective is a block-coordinate ascent and never
/// decreases. The entropy of intermediate iterates is not monotone (they
/// miss the row marginal) but ends at the optimal value.
#[test]
fn ipfp_dual_is_monotone() {
    let (_, gen) = gaussian(64, 0.25);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    let opts = IpfpOptions {
        record_history: true,
        ..IpfpOptions::default()
    };
    for (mu, nu) in pairs(&m, 10, 3) {
        let sol = ipfp(&k, &mu, &nu, &opts).unwrap();
        assert!(sol.converged);
        for w in sol.history.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(sol.dual_cost <= sol.primal_cost + 1e-9);
        let last = *sol.primal_history.last().unwrap();
        assert!((last - sol.primal_cost).abs() < 1e-8);
    }
}

#[test]
fn cost_against_stationary_measure() {
    let (_, gen) = gaussian(48, 1.0);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    for (_, nu) in pairs(&m, 5, 12) {
        // T(nu|m) = T(m, nu) and T(m|nu) = T(m, nu) - H(nu|m).
        let sol = ipfp(&k, &m, &nu, &IpfpOptions::default()).unwrap();
        let t = entropic_cost(&sol).unwrap();
        assert!((forward_cost(&sol, &m, &k).unwrap() - t).abs() < 1e-8);
        let back = ipfp(&k, &nu, &m, &IpfpOptions::default()).unwrap();
        let h = relative_entropy(&nu, &m).unwrap();
        assert!((forward_cost(&back, &nu, &k).unwrap() - (t - h)).abs() < 1e-8);
    }
}

#[test]
fn cost_is_convex_along_segments() {
    let (_, gen) = gaussian(48, 0.5);
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    let ps = pairs(&m, 6, 13);
    for w in ps.windows(2) {
        let (mu0, nu) = (&w[0].0, &w[0].1);
        let mu1 = &w[1].0;
        let mid: Vec<f64> = mu0.weights().iter().zip(mu1.weights()).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid = DiscreteMeasure::from_masses(m.space().clone(), &mid).unwrap();
        let t0 = transport_cost(&k, mu0, nu).unwrap();
        let t1 = transport_cost(&k, mu1, nu).unwrap();
        let tm = transport_cost(&k, &mid, nu).unwrap();
        assert!(tm <= 0.5 * (t0 + t1) + 1e-9);
    }
}
