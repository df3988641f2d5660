//! Plain linear policy fitting: `minimize L(K) + r(K)`.

use crate::conic_ls::{fit_objective, solve_k_step, LossSpec, RegularizerSpec};
use crate::error::Result;
use crate::linsys::{DemoSet, Gain};
use crate::scalar::Real;

pub const DEFAULT_RIDGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T: Real> {
    pub k: Gain<T>,
    pub objective: T,
    pub loss: LossSpec,
    pub reg: RegularizerSpec,
}

impl<T: Real> FitReport<T> {
    /// Objective recomputed from the stored gain.
    pub fn recompute_objective(&self, demos: &DemoSet<T>) -> T {
        fit_objective(&self.k, demos, &self.loss, &self.reg)
    }
}

/// Fits `K` by minimising the loss on `demos` plus the regulariser.
///
/// With `λ = 0` and rank-deficient states the minimum-norm minimiser is returned.
pub fn policy_fit<T: Real>(
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
) -> Result<FitReport<T>> {
    let k = solve_k_step(demos, loss, reg, None)?;
    let objective = fit_objective(&k, demos, loss, reg);
    Ok(FitReport {
        k,
        objective,
        loss: *loss,
        reg: *reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn scalar_ridge_fit() {
        let demos = DemoSet::<f64>::new(
            vec![DVector::from_element(1, 1.0)],
            vec![DVector::from_element(1, 2.0)],
        )
        .unwrap();
        let fit = policy_fit(
            &demos,
            &LossSpec::Quadratic,
            &RegularizerSpec::ridge(DEFAULT_RIDGE).unwrap(),
        )
        .unwrap();
        assert!((fit.k.matrix()[(0, 0)] - 2.0 / 1.01).abs() < 1e-12);
        assert!((fit.recompute_objective(&demos) - fit.objective).abs() < 1e-12);
    }

    #[test]
    fn recovers_expert_from_independent_states() {
        let k0 = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        let states: Vec<_> = [[1.0, 0.2, -0.3], [0.0, 1.5, 0.4], [-0.6, 0.3, 2.0]]
            .iter()
            .map(|s| DVector::from_row_slice(s))
            .collect();
        let inputs = states.iter().map(|x| &k0 * x).collect();
        let demos = DemoSet::new(states, inputs).unwrap();
        let fit = policy_fit(
            &demos,
            &LossSpec::Quadratic,
            &RegularizerSpec::ridge(1e-8).unwrap(),
        )
        .unwrap();
        assert!((fit.k.matrix() - &k0).norm() < 1e-6);
    }
}
