mod common;

use kcfit::{policy_fit, DemoSet, Gain, LossSpec, RegularizerSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn demos_from(rng: &mut ChaCha8Rng, k: &DMatrix<f64>, count: usize, noise: f64) -> DemoSet<f64> {
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

fn ridge(weight: f64) -> RegularizerSpec {
    RegularizerSpec::ridge(weight).unwrap()
}

proptest! {
    #![proptest_config(common::proptest_config(50))]

    #[test]
    fn quadratic_fit_matches_closed_form(seed in any::<u64>(), count in 1usize..12, lambda in 1e-3f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = demos_from(&mut rng, &k0, count, 0.3);
        let fit = policy_fit(&demos, &LossSpec::Quadratic, &ridge(lambda)).unwrap();
        // K = U Xᵀ (X Xᵀ + λI)⁻¹
        let x = demos.state_matrix();
        let u = demos.input_matrix();
        let gram = &x * x.transpose() + DMatrix::identity(3, 3) * lambda;
        let expected = &u * x.transpose() * gram.try_inverse().unwrap();
        prop_assert!((fit.k.matrix() - &expected).norm() <= 1e-9 * (1.0 + expected.norm()));
        prop_assert_eq!(fit.recompute_objective(&demos), fit.objective);
    }

    #[test]
    fn fit_ignores_demo_order(seed in any::<u64>(), huber in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = demos_from(&mut rng, &k0, 9, 1.0);
        let loss = if huber { LossSpec::huber(0.5).unwrap() } else { LossSpec::Quadratic };
        let mut order: Vec<usize> = (0..demos.len()).collect();
        order.rotate_left(seed as usize % 9);
        order.swap(0, 8);
        let shuffled = DemoSet::new(
            order.iter().map(|&i| demos.states()[i].clone()).collect(),
            order.iter().map(|&i| demos.inputs()[i].clone()).collect(),
        ).unwrap();
        let a = policy_fit(&demos, &loss, &ridge(0.01)).unwrap();
        let b = policy_fit(&shuffled, &loss, &ridge(0.01)).unwrap();
        prop_assert!((a.k.matrix() - b.k.matrix()).norm() <= 1e-9 * (1.0 + a.k.matrix().norm()));
    }

    #[test]
    fn duplicated_demos_equal_halved_ridge(seed in any::<u64>(), huber in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = demos_from(&mut rng, &k0, 5, 1.0);
        let loss = if huber { LossSpec::huber(0.5).unwrap() } else { LossSpec::Quadratic };
        let doubled = DemoSet::new(
            demos.states().iter().chain(demos.states()).cloned().collect(),
            demos.inputs().iter().chain(demos.inputs()).cloned().collect(),
        ).unwrap();
        let a = policy_fit(&demos, &loss, &ridge(0.05)).unwrap();
        let b = policy_fit(&doubled, &loss, &ridge(0.1)).unwrap();
        prop_assert!((a.k.matrix() - b.k.matrix()).norm() <= 1e-8 * (1.0 + a.k.matrix().norm()));
        prop_assert!((2.0 * a.objective - b.objective).abs() <= 1e-9 * (1.0 + b.objective));
    }

    #[test]
    fn fit_beats_any_other_gain(seed in any::<u64>(), huber in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 3);
        let demos = demos_from(&mut rng, &k0, 6, 1.0);
        let loss = if huber { LossSpec::huber(0.3).unwrap() } else { LossSpec::Quadratic };
        let reg = ridge(0.01);
        let fit = policy_fit(&demos, &loss, &reg).unwrap();
        for scale in [1e-2, 1e-1, 1.0] {
            let other = Gain(fit.k.matrix() + common::normal_matrix(&mut rng, 2, 3) * scale);
            let value = kcfit::conic_ls::fit_objective(&other, &demos, &loss, &reg);
            prop_assert!(fit.objective <= value + 1e-10 * (1.0 + value));
        }
    }
}

#[test]
fn noiseless_independent_states_recover_gain() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k0 = common::normal_matrix(&mut rng, 2, 4);
        let demos = demos_from(&mut rng, &k0, 4, 0.0);
        let fit = policy_fit(&demos, &LossSpec::Quadratic, &ridge(0.0)).unwrap();
        assert!((fit.k.matrix() - &k0).norm() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn huber_resists_sign_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k0 = common::normal_matrix(&mut rng, 1, 3);
    let clean = demos_from(&mut rng, &k0, 40, 0.01);
    let inputs = clean
        .inputs()
        .iter()
        .enumerate()
        .map(|(i, u)| if i % 8 == 0 { -u * 5.0 } else { u.clone() })
        .collect();
    let corrupted = DemoSet::new(clean.states().to_vec(), inputs).unwrap();
    let quad = policy_fit(&corrupted, &LossSpec::Quadratic, &ridge(0.01)).unwrap();
    let huber = policy_fit(&corrupted, &LossSpec::huber(0.1).unwrap(), &ridge(0.01)).unwrap();
    let err_quad = (quad.k.matrix() - &k0).norm();
    let err_huber = (huber.k.matrix() - &k0).norm();
    assert!(err_huber < 0.5 * err_quad, "{err_huber} vs {err_quad}");
}

#[test]
fn empty_demo_set_is_rejected() {
    assert!(matches!(
        DemoSet::<f64>::new(vec![], vec![]),
        Err(kcfit::Error::Validation(_))
    ));
}
