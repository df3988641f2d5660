#![allow(dead_code)]

use kcfit::linalg::spectral_radius;
use kcfit::LinearDynamics;
use nalgebra::DMatrix;
use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Standard normal `A`, `B` with `A` rescaled to spectral radius one.
pub fn random_system(seed: u64, n: usize, m: usize, w: f64) -> LinearDynamics<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a = normal_matrix(&mut rng, n, n);
        let b = normal_matrix(&mut rng, n, m);
        let rho = spectral_radius(&a).unwrap();
        if rho < 1e-12 {
            continue;
        }
        let sys = LinearDynamics::new(a / rho, b, DMatrix::identity(n, n) * w).unwrap();
        if sys.is_controllable() {
            return sys;
        }
    }
}

/// Fixed seed and no persistence, so every run samples the same cases.
pub fn proptest_config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(7),
        failure_persistence: None,
        ..Config::default()
    }
}
