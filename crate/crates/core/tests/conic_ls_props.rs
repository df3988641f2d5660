mod common;

use kcfit::conic_ls::{
    k_step_objective, pqr_objective, project_psd, solve_k_step, solve_pqr_step, AugmentedTerms,
    PqrOptions,
};
use kcfit::linalg::min_eigenvalue;
use kcfit::{solve_lqr, CostMatrices, DemoSet, Gain, LossSpec, RegularizerSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = common::normal_matrix(rng, n, n);
    (&g + g.transpose()) * 0.5
}

fn random_demos(rng: &mut ChaCha8Rng, k: &DMatrix<f64>, count: usize, noise: f64) -> DemoSet<f64> {
    let (m, n) = k.shape();
    let states: Vec<DVector<f64>> = (0..count)
        .map(|_| common::normal_matrix(rng, n, 1).column(0).into_owned())
        .collect();
    let inputs = states
        .iter()
        .map(|x| k * x + common::normal_matrix(rng, m, 1).column(0) * noise)
        .collect();
    DemoSet::new(states, inputs).unwrap()
}

proptest! {
    #![proptest_config(common::proptest_config(100))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = symmetric(&mut rng, n);
        let b = symmetric(&mut rng, n);
        for floor in [0.0, 1.0] {
            let pa = project_psd(&a, floor);
            let pb = project_psd(&b, floor);
            prop_assert!((project_psd(&pa, floor) - &pa).norm() <= 1e-12 * (1.0 + pa.norm()));
            prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() * (1.0 + 1e-12));
            prop_assert!(min_eigenvalue(&pa) >= floor - 1e-12 * (1.0 + pa.norm()));
        }
    }
}

proptest! {
    #![proptest_config(common::proptest_config(30))]

    #[test]
    fn k_step_is_a_local_minimum(seed in any::<u64>(), huber in any::<bool>(), penalised in any::<bool>()) {
        let sys = common::random_system(seed, 3, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = random_demos(&mut rng, &k0, 6, 0.5);
        let loss = if huber { LossSpec::huber(0.5).unwrap() } else { LossSpec::Quadratic };
        let reg = RegularizerSpec::ridge(0.01).unwrap();
        let g = common::normal_matrix(&mut rng, 3, 3);
        let p = &g * g.transpose();
        let q = DMatrix::identity(3, 3);
        let r = DMatrix::identity(2, 2);
        let y1 = common::normal_matrix(&mut rng, 3, 3);
        let y2 = common::normal_matrix(&mut rng, 2, 3);
        let terms = AugmentedTerms { dynamics: &sys, rho: 1.0, p: &p, q: &q, r: &r, y1: &y1, y2: &y2 };
        let terms = penalised.then_some(&terms);
        let k = solve_k_step(&demos, &loss, &reg, terms).unwrap();
        let base = k_step_objective(&k, &demos, &loss, &reg, terms);
        for _ in 0..20 {
            let dir = common::normal_matrix(&mut rng, 2, 3);
            let bumped = Gain(k.matrix() + dir.normalize() * 1e-3);
            let value = k_step_objective(&bumped, &demos, &loss, &reg, terms);
            prop_assert!(base <= value + 1e-12 * (1.0 + base.abs()), "{base} > {value}");
        }
    }

    #[test]
    fn huber_inside_quadratic_branch_matches_half_quadratic(seed in any::<u64>()) {
        // With every residual below M the Huber loss is ½r², so it equals the
        // quadratic fit at twice the ridge weight.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = random_demos(&mut rng, &k0, 8, 1e-4);
        let huber = solve_k_step(&demos, &LossSpec::huber(10.0).unwrap(),
            &RegularizerSpec::ridge(0.005).unwrap(), None).unwrap();
        let quad = solve_k_step(&demos, &LossSpec::Quadratic,
            &RegularizerSpec::ridge(0.01).unwrap(), None).unwrap();
        prop_assert!((huber.matrix() - quad.matrix()).norm() <= 1e-9);
        let huber0 = solve_k_step(&demos, &LossSpec::huber(10.0).unwrap(),
            &RegularizerSpec::ridge(0.0).unwrap(), None).unwrap();
        let quad0 = solve_k_step(&demos, &LossSpec::Quadratic,
            &RegularizerSpec::ridge(0.0).unwrap(), None).unwrap();
        prop_assert!((huber0.matrix() - quad0.matrix()).norm() <= 1e-9);
    }

    #[test]
    fn pqr_step_is_cone_feasible(seed in any::<u64>(), rho in 0.1f64..10.0) {
        let sys = common::random_system(seed, 3, 2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Gain(common::normal_matrix(&mut rng, 2, 3));
        let y1 = common::normal_matrix(&mut rng, 3, 3);
        let y2 = common::normal_matrix(&mut rng, 2, 3);
        let duals = kcfit::conic_ls::DualTerms { y1: &y1, y2: &y2, rho };
        let sol = solve_pqr_step(&sys, &k, Some(&duals), None, &PqrOptions::default()).unwrap();
        prop_assert!(sol.p == sol.p.transpose() && sol.q == sol.q.transpose() && sol.r == sol.r.transpose());
        prop_assert!(min_eigenvalue(&sol.p) >= -1e-8);
        prop_assert!(min_eigenvalue(&sol.q) >= -1e-8);
        prop_assert!(min_eigenvalue(&sol.r) >= 1.0 - 1e-8);
        let recomputed = pqr_objective(&sys, &k, &sol.p, &sol.q, &sol.r, Some(&duals));
        prop_assert!((recomputed - sol.objective).abs() <= 1e-9 * (1.0 + recomputed));
    }
}

#[test]
fn large_penalty_pulls_k_to_lqr_gain() {
    for seed in 0..5 {
        let sys = common::random_system(seed, 4, 2, 0.25);
        let cost = CostMatrices::identity(4, 2);
        let lqr = solve_lqr(&sys, &cost).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let demos = random_demos(&mut rng, lqr.k.matrix(), 10, 0.0);
        let zero1 = DMatrix::zeros(4, 4);
        let zero2 = DMatrix::zeros(2, 4);
        let terms = AugmentedTerms {
            dynamics: &sys,
            rho: 1e6,
            p: &lqr.p,
            q: cost.q(),
            r: cost.r(),
            y1: &zero1,
            y2: &zero2,
        };
        let k = solve_k_step(
            &demos,
            &LossSpec::Quadratic,
            &RegularizerSpec::ridge(0.01).unwrap(),
            Some(&terms),
        )
        .unwrap();
        assert!((k.matrix() - lqr.k.matrix()).norm() <= 1e-3, "seed {seed}");
    }
}

#[test]
fn pqr_step_reaches_zero_for_optimal_gain() {
    for seed in 0..10 {
        let sys = common::random_system(seed, 4, 2, 0.25);
        let k = solve_lqr(&sys, &CostMatrices::identity(4, 2)).unwrap().k;
        let options = PqrOptions {
            target_objective: 1e-10,
            ..PqrOptions::default()
        };
        let sol = solve_pqr_step(&sys, &k, None, None, &options).unwrap();
        assert!(sol.objective <= 1e-10, "seed {seed}: {}", sol.objective);
        assert!(sol.converged);
    }
}

#[test]
fn singular_normal_equations_are_reported() {
    // Zero states with no ridge and no penalty: every K fits, and the
    // inputs cannot be matched, so the system is singular and inconsistent.
    let demos = DemoSet::new(vec![DVector::zeros(2)], vec![DVector::from_element(1, 1.0)]).unwrap();
    let err = solve_k_step(&demos, &LossSpec::Quadratic, &RegularizerSpec::ridge(0.0).unwrap(), None);
    match err {
        Ok(k) => assert_eq!(k.matrix().norm(), 0.0),
        Err(e) => assert!(matches!(e, kcfit::Error::SingularNormalEquations)),
    }
}
