//! The benchmark problems: random 4-state systems and the 747 in level flight.

use kcfit::conic_ls::project_psd;
use kcfit::linalg::spectral_radius;
use kcfit::{CostMatrices, LinearDynamics};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dynamics, true cost and expert input-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub dynamics: LinearDynamics<f64>,
    pub cost: CostMatrices<f64>,
    pub sigma: DMatrix<f64>,
}

/// `n = 4`, `m = 2`, standard normal `A` and `B` with `A` rescaled to spectral
/// radius one; `Q = R = I`, `W = 0.25 I`, `Σ = 4 I`.
pub fn build_small_random(seed: u64) -> Problem {
    let (n, m) = (4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng));
    let (a, b) = loop {
        let a: DMatrix<f64> = normal(n, n);
        let b = normal(n, m);
        let rho = spectral_radius(&a).expect("square matrix");
        if rho >= 1e-12 {
            break (a / rho, b);
        }
    };
    Problem {
        dynamics: LinearDynamics::new(a, b, DMatrix::identity(n, n) * 0.25).expect("valid dimensions"),
        cost: CostMatrices::identity(n, m),
        sigma: DMatrix::identity(m, m) * 4.0,
    }
}

/// Wind covariance of the 747 example as printed. It is slightly indefinite
/// (smallest eigenvalue about −2.9e-5).
#[rustfmt::skip]
pub const AIRCRAFT_W: [f64; 16] = [
    0.100, -0.003, 0.002, 0.0,
    -0.003, 0.1, -0.010, 0.0,
    0.002, -0.010, 0.001, 0.0,
    0.0, 0.0, 0.0, 0.0,
];

/// Linearised longitudinal 747 dynamics at 40000 ft, sampled at 0.01 s.
/// States `(u, v, q, θ)`, inputs elevator and thrust; `Q = R = I`, `Σ = 25 I`.
/// `W` is the PSD projection of [`AIRCRAFT_W`].
pub fn build_aircraft() -> Problem {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.039, 0.0, -0.322,
        -0.065, 0.997, 7.74, 0.0,
        0.02, -0.101, 0.996, 0.0,
        0.0, 0.0, 1.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0001, 0.0,
        -0.0018, -0.0004,
        -0.0116, 0.00598,
        0.0, 0.0,
    ]);
    let w = project_psd(&DMatrix::from_row_slice(4, 4, &AIRCRAFT_W), 0.0);
    Problem {
        dynamics: LinearDynamics::new(a, b, w).expect("valid dimensions"),
        cost: CostMatrices::identity(4, 2),
        sigma: DMatrix::identity(2, 2) * 25.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use kcfit::linalg::min_eigenvalue;

    #[test]
    fn small_random_shape_and_scaling() {
        let p = build_small_random(3);
        assert_eq!(p.dynamics.a().shape(), (4, 4));
        assert_eq!(p.dynamics.b().shape(), (4, 2));
        let rho = spectral_radius(p.dynamics.a()).unwrap();
        assert!((rho - 1.0).abs() <= 1e-10);
        assert_eq!(build_small_random(3), p);
        assert_ne!(build_small_random(4), p);
    }

    #[test]
    fn aircraft_entries() {
        let p = build_aircraft();
        assert_eq!(p.dynamics.a()[(1, 2)], 7.74);
        assert_eq!(p.dynamics.w()[(3, 3)], 0.0);
        assert_eq!(p.dynamics.b()[(0, 0)], 0.0001);
        let printed = DMatrix::from_row_slice(4, 4, &AIRCRAFT_W);
        assert!(min_eigenvalue(&printed) < -2e-5);
        assert!((p.dynamics.w() - &printed).amax() < 3e-5);
        assert!((p.dynamics.w()[(0, 0)] - 0.100).abs() < 5e-4);
        assert_eq!(p.sigma[(1, 1)], 25.0);
    }
}
