//! Learning linear state-feedback gains from expert demonstrations, with and
//! without the constraint that the gain be LQR-optimal for some quadratic cost.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`.

pub mod conic_ls;
pub mod error;
pub mod fitting;
pub mod io;
pub mod kalman_fit;
pub mod linalg;
pub mod linsys;
pub mod riccati;
pub mod scalar;

pub use conic_ls::{LossSpec, RegularizerSpec};
pub use error::{Error, Result};
pub use fitting::{policy_fit, FitReport};
pub use kalman_fit::{admm_iterate, fit_kalman, AdmmConfig, AdmmState, KalmanFitReport};
pub use linsys::{
    closed_loop_cost, generate_demos, Cost, CostMatrices, DemoSet, Gain, LinearDynamics,
};
pub use riccati::{check_kalman_feasible, solve_lqr, KalmanCertificate, LqrSolution};
pub use scalar::Real;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type Dynamics = LinearDynamics<f64>;
pub type Demos = DemoSet<f64>;
pub type GainF64 = Gain<f64>;
pub type Weights = CostMatrices<f64>;
pub type Certificate = KalmanCertificate<f64>;
pub type LqrSolutionF64 = LqrSolution<f64>;
pub type FitReportF64 = FitReport<f64>;
pub type KalmanFitReportF64 = KalmanFitReport<f64>;
pub type State = AdmmState<f64>;
