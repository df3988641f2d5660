//! Discrete-time LQR: the algebraic Riccati equation, the optimal gain, and
//! the Kalman question of whether a given gain is optimal for *some* cost.

use nalgebra::DMatrix;

use crate::conic_ls::{constraint_blocks, solve_pqr_step, PqrOptions};
use crate::error::{Error, Result};
use crate::linalg::{in_cone, solve_spd, symmetrize};
use crate::linsys::{CostMatrices, Gain, LinearDynamics};
use crate::scalar::Real;

/// Algorithm used by [`solve_lqr_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiccatiMethod {
    /// Structure-preserving doubling; quadratically convergent, converges to
    /// the stabilising solution.
    #[default]
    Doubling,
    /// Plain value iteration from `P = Q`.
    ValueIteration,
}

const VALUE_ITERATION_TOL: f64 = 1e-12;
const VALUE_ITERATION_MAX: usize = 10_000;
const DOUBLING_TOL: f64 = 1e-14;
const DOUBLING_MAX: usize = 100;
const POLISH_SWEEPS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution<T: Real> {
    pub k: Gain<T>,
    /// Cost-to-go matrix, the PSD solution of the ARE.
    pub p: DMatrix<T>,
    /// `‖P − (Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA)‖_F`
    pub residual: T,
    pub iterations: usize,
}

/// `K = −(R + BᵀPB)⁻¹ BᵀPA`.
pub fn optimal_gain<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    p: &DMatrix<T>,
) -> Result<Gain<T>> {
    let b = dynamics.b();
    let bt_p = b.transpose() * p;
    let s = cost.r() + &bt_p * b;
    let rhs = -(bt_p * dynamics.a());
    solve_spd(&s, &rhs)
        .map(Gain)
        .ok_or_else(|| Error::Validation("R + BᵀPB is singular".into()))
}

fn riccati_map<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    p: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let a = dynamics.a();
    let k = optimal_gain(dynamics, cost, p)?;
    // Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA = Q + AᵀPA + AᵀPB K
    let at_p = a.transpose() * p;
    Ok(symmetrize(
        &(cost.q() + &at_p * a + at_p * dynamics.b() * k.0),
    ))
}

/// Frobenius norm of the ARE residual at `p`.
pub fn are_residual<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    p: &DMatrix<T>,
) -> Result<T> {
    Ok((riccati_map(dynamics, cost, p)? - p).norm())
}

fn check_lqr_dims<T: Real>(dynamics: &LinearDynamics<T>, cost: &CostMatrices<T>) -> Result<()> {
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    if cost.q().shape() != (n, n) || cost.r().shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "cost matrices do not match a {n}-state/{m}-input system"
        )));
    }
    Ok(())
}

fn value_iteration<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
) -> Result<(DMatrix<T>, usize)> {
    let tol = T::tol(VALUE_ITERATION_TOL);
    let mut p = cost.q().clone();
    for it in 1..=VALUE_ITERATION_MAX {
        let next = riccati_map(dynamics, cost, &p)?;
        let change = (&next - &p).norm();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= tol * p.norm() || change == T::zero() {
            return Ok((p, it));
        }
    }
    Err(Error::NotConverged {
        solver: "Riccati value iteration",
        iterations: VALUE_ITERATION_MAX,
        residual: are_residual(dynamics, cost, &p).map(|r| r.as_f64()).unwrap_or(f64::NAN),
    })
}

/// Structure-preserving doubling:
/// `A ← A(I+GH)⁻¹A`, `G ← G + A(I+GH)⁻¹GAᵀ`, `H ← H + Aᵀ H (I+GH)⁻¹ A`,
/// from `(A, BR⁻¹Bᵀ, Q)`; `H` converges to the stabilising ARE solution.
fn doubling<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
) -> Result<(DMatrix<T>, usize)> {
    let n = dynamics.n_states();
    let b = dynamics.b();
    let r_inv_bt = solve_spd(cost.r(), &b.transpose())
        .ok_or_else(|| Error::Validation("R is singular".into()))?;
    let mut a = dynamics.a().clone();
    let mut g = symmetrize(&(b * r_inv_bt));
    let mut h = cost.q().clone();
    let eye = DMatrix::<T>::identity(n, n);
    let tol = T::tol(DOUBLING_TOL);
    for it in 1..=DOUBLING_MAX {
        let w = &eye + &g * &h;
        let lu = w.lu();
        let w_inv_a = lu
            .solve(&a)
            .ok_or_else(|| Error::Validation("I + GH is singular in doubling".into()))?;
        let w_inv_g = lu
            .solve(&g)
            .ok_or_else(|| Error::Validation("I + GH is singular in doubling".into()))?;
        let h_next = symmetrize(&(&h + a.transpose() * &h * &w_inv_a));
        let g_next = symmetrize(&(&g + &a * w_inv_g * a.transpose()));
        let a_next = &a * w_inv_a;
        let change = (&h_next - &h).norm();
        h = h_next;
        g = g_next;
        a = a_next;
        if !h.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= tol * h.norm() || change == T::zero() {
            return Ok((h, it));
        }
    }
    Err(Error::NotConverged {
        solver: "Riccati doubling",
        iterations: DOUBLING_MAX,
        residual: are_residual(dynamics, cost, &h).map(|r| r.as_f64()).unwrap_or(f64::NAN),
    })
}

pub fn solve_lqr<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
) -> Result<LqrSolution<T>> {
    solve_lqr_with(dynamics, cost, RiccatiMethod::default())
}

/// Solves the ARE and returns the optimal gain. The disturbance covariance
/// plays no role.
pub fn solve_lqr_with<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    method: RiccatiMethod,
) -> Result<LqrSolution<T>> {
    check_lqr_dims(dynamics, cost)?;
    let (mut p, mut iterations) = match method {
        RiccatiMethod::Doubling => doubling(dynamics, cost)?,
        RiccatiMethod::ValueIteration => value_iteration(dynamics, cost)?,
    };
    let mut residual = are_residual(dynamics, cost, &p)?;
    // Fixed-point sweeps clean up roundoff left by doubling.
    for _ in 0..POLISH_SWEEPS {
        let next = riccati_map(dynamics, cost, &p)?;
        let next_residual = are_residual(dynamics, cost, &next)?;
        if next_residual >= residual {
            break;
        }
        p = next;
        residual = next_residual;
        iterations += 1;
    }
    if residual > T::tol(1e-8) * (T::one() + p.norm()) || !residual.is_finite() {
        return Err(Error::NotConverged {
            solver: "Riccati",
            iterations,
            residual: residual.as_f64(),
        });
    }
    let k = optimal_gain(dynamics, cost, &p)?;
    Ok(LqrSolution {
        k,
        p,
        residual,
        iterations,
    })
}

/// `‖[Q + AᵀP(A+BK) − P; RK + BᵀP(A+BK)]‖_F`.
pub fn kalman_residual<T: Real>(
    dynamics: &LinearDynamics<T>,
    k: &Gain<T>,
    p: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> T {
    let (m1, m2) = constraint_blocks(dynamics, k, p, q, r, None);
    (m1.norm_squared() + m2.norm_squared()).sqrt()
}

/// `(P, Q, R)` witnessing that a gain is LQR-optimal, with the constraint
/// residual it achieves.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanCertificate<T: Real> {
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub residual: T,
}

impl<T: Real> KalmanCertificate<T> {
    pub fn new(
        dynamics: &LinearDynamics<T>,
        k: &Gain<T>,
        p: DMatrix<T>,
        q: DMatrix<T>,
        r: DMatrix<T>,
    ) -> Result<Self> {
        let n = dynamics.n_states();
        let m = dynamics.n_inputs();
        dynamics.check_gain(k)?;
        crate::linalg::ensure_shape(&p, n, n, "P")?;
        crate::linalg::ensure_shape(&q, n, n, "Q")?;
        crate::linalg::ensure_shape(&r, m, m, "R")?;
        let residual = kalman_residual(dynamics, k, &p, &q, &r);
        Ok(Self { p, q, r, residual })
    }

    /// `P ⪰ 0`, `Q ⪰ 0`, `R ⪰ I`, each to `1e-8` relative slack.
    pub fn is_cone_feasible(&self) -> bool {
        in_cone(&self.p, T::zero()) && in_cone(&self.q, T::zero()) && in_cone(&self.r, T::one())
    }

    pub fn cost(&self) -> Result<CostMatrices<T>> {
        CostMatrices::new(self.q.clone(), self.r.clone())
    }
}

/// Result of [`check_kalman_feasible`]. Infeasibility is reported, not raised.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanCheck<T: Real> {
    /// Best certificate found; its residual is the smallest achieved.
    pub certificate: KalmanCertificate<T>,
    pub feasible: bool,
    pub tolerance: T,
    pub iterations: usize,
}

/// `1e-6 · (1 + ‖K‖_F)`.
pub fn default_feasibility_tol<T: Real>(k: &Gain<T>) -> T {
    T::tol(1e-6) * (T::one() + k.0.norm())
}

/// Searches for `(P, Q, R)` with `P ⪰ 0, Q ⪰ 0, R ⪰ I` satisfying the Kalman
/// constraint for `k`, by minimising the squared constraint residual over the
/// cones. `k` is declared feasible when the residual reaches `tol`
/// (default [`default_feasibility_tol`]).
pub fn check_kalman_feasible<T: Real>(
    dynamics: &LinearDynamics<T>,
    k: &Gain<T>,
    tol: Option<T>,
    max_iter: usize,
) -> Result<KalmanCheck<T>> {
    let tolerance = tol.unwrap_or_else(|| default_feasibility_tol(k));
    let target = tolerance.as_f64() * 1e-2;
    let options = PqrOptions {
        tol: 1e-13,
        max_iter,
        target_objective: target * target,
    };
    let sol = solve_pqr_step(dynamics, k, None, None, &options)?;
    let certificate = KalmanCertificate::new(dynamics, k, sol.p, sol.q, sol.r)?;
    let feasible = certificate.residual <= tolerance && certificate.is_cone_feasible();
    Ok(KalmanCheck {
        certificate,
        feasible,
        tolerance,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> LinearDynamics<f64> {
        LinearDynamics::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_golden_ratio() {
        // P² − P − 1 = 0 for A = B = Q = R = 1.
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        for method in [RiccatiMethod::Doubling, RiccatiMethod::ValueIteration] {
            let sol = solve_lqr_with(&scalar(1.0, 1.0), &CostMatrices::identity(1, 1), method)
                .unwrap();
            assert_relative_eq!(sol.p[(0, 0)], golden, epsilon = 1e-12);
            assert_relative_eq!(sol.k.0[(0, 0)], -(5f64.sqrt() - 1.0) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_dynamics_gives_q_and_zero_gain() {
        let dynamics = LinearDynamics::new(
            DMatrix::zeros(3, 3),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let sol = solve_lqr(&dynamics, &CostMatrices::identity(3, 2)).unwrap();
        assert_relative_eq!(sol.p, DMatrix::identity(3, 3), epsilon = 1e-14);
        assert_relative_eq!(sol.k.0, DMatrix::zeros(2, 3), epsilon = 1e-14);
    }

    #[test]
    fn residual_examples() {
        let dynamics = scalar(0.0, 1.0);
        let zero = DMatrix::zeros(1, 1);
        let one = DMatrix::identity(1, 1);
        assert_eq!(kalman_residual(&dynamics, &Gain::zeros(1, 1), &zero, &zero, &one), 0.0);
        let k = Gain(DMatrix::from_element(1, 1, 1.0));
        for p in [0.0, 0.5, 3.0] {
            for r in [1.0, 2.0] {
                let pm = DMatrix::from_element(1, 1, p);
                let rm = DMatrix::from_element(1, 1, r);
                assert!(kalman_residual(&dynamics, &k, &pm, &zero, &rm) >= r + p);
            }
        }
    }

    #[test]
    fn zero_gain_feasible_with_trivial_certificate() {
        let dynamics = LinearDynamics::new(
            DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.2, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let check = check_kalman_feasible(&dynamics, &Gain::zeros(1, 2), None, 1000).unwrap();
        assert!(check.feasible);
        assert_eq!(check.certificate.residual, 0.0);
        assert_eq!(check.certificate.p, DMatrix::zeros(2, 2));
        assert_eq!(check.certificate.q, DMatrix::zeros(2, 2));
        assert_eq!(check.certificate.r, DMatrix::identity(1, 1));
    }

    #[test]
    fn scalar_unit_gain_is_infeasible() {
        let check = check_kalman_feasible(
            &scalar(0.0, 1.0),
            &Gain(DMatrix::from_element(1, 1, 1.0)),
            Some(1e-6),
            5000,
        )
        .unwrap();
        assert!(!check.feasible);
        assert!(check.certificate.residual >= 1.0 - 1e-9);
    }

    #[test]
    fn lqr_gain_is_certified() {
        let dynamics = LinearDynamics::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sol = solve_lqr(&dynamics, &CostMatrices::identity(2, 1)).unwrap();
        let r = kalman_residual(
            &dynamics,
            &sol.k,
            &sol.p,
            &DMatrix::identity(2, 2),
            &DMatrix::identity(1, 1),
        );
        assert!(r <= 1e-8, "{r}");
        let check = check_kalman_feasible(&dynamics, &sol.k, None, 20_000).unwrap();
        assert!(check.feasible, "residual {}", check.certificate.residual);
    }

    #[test]
    fn mismatched_cost_dimensions() {
        let err = solve_lqr(&scalar(1.0, 1.0), &CostMatrices::identity(2, 1));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }
}
