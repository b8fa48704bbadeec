//! IPFP against brute-force minimization over the coupling polytope on
//! 2-point and 3-point grids.

use eti_core::oracle::brute_force_cost;
use eti_core::reference::{build_generator, transition_kernel, PotentialSpec};
use eti_core::schrodinger::{ipfp, IpfpOptions};
use eti_core::{DiscreteMeasure, GridSpace, ReferenceKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize, rng: &mut ChaCha8Rng) -> (ReferenceKernel, DiscreteMeasure, DiscreteMeasure) {
    let g = GridSpace::uniform(-1.0, 1.0, n).unwrap();
    let pot = PotentialSpec::Quadratic { lambda: rng.random_range(0.5..2.0) };
    let gen = build_generator(&g, &pot, rng.random_range(0.3..1.5)).unwrap();
    let k = transition_kernel(&gen, rng.random_range(0.2..1.0)).unwrap();
    let mut draw = || {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        DiscreteMeasure::from_masses(g.clone(), &w).unwrap()
    };
    let mu = draw();
    let nu = draw();
    (k, mu, nu)
}

fn solve(k: &ReferenceKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let opts = IpfpOptions {
        tol: 1e-14,
        ..IpfpOptions::default()
    };
    let sol = ipfp(k, mu, nu, &opts).unwrap();
    assert!(sol.converged);
    sol.primal_cost
}

#[test]
fn two_point_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let (k, mu, nu) = setup(2, &mut rng);
        let oracle = brute_force_cost(&k, &mu, &nu).unwrap();
        let primal = solve(&k, &mu, &nu);
        assert!((primal - oracle).abs() <= 1e-7, "{primal} vs {oracle}");
    }
}

#[test]
fn three_point_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..3 {
        let (k, mu, nu) = setup(3, &mut rng);
        let oracle = brute_force_cost(&k, &mu, &nu).unwrap();
        let primal = solve(&k, &mu, &nu);
        assert!((primal - oracle).abs() <= 1e-7, "{primal} vs {oracle}");
    }
}

#[test]
fn oracle_rejects_larger_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (k, mu, nu) = setup(4, &mut rng);
    assert!(brute_force_cost(&k, &mu, &nu).is_err());
}
