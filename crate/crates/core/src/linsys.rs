//! Linear dynamics `x⁺ = A x + B u + ω`, linear policies `u = K x`, expert
//! demonstrations and the infinite-horizon average cost of a closed loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_shape, ensure_square, min_eigenvalue, psd_sqrt, solve_stein};
use crate::scalar::Real;

pub use crate::linalg::spectral_radius;

/// Closed loops with `ρ(A+BK) ≥ 1 - STABILITY_MARGIN` are treated as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

fn check_symmetric<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > T::tol(1e-10) * (T::one() + m.norm()) {
        return Err(Error::Validation(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn check_psd<T: Real>(m: &DMatrix<T>, what: &str, slack: f64) -> Result<()> {
    check_symmetric(m, what)?;
    let lo = min_eigenvalue(m);
    if lo < -T::tol(slack) * (T::one() + m.norm()) {
        return Err(Error::Validation(format!(
            "{what} is not positive semidefinite (min eigenvalue {lo:?})"
        )));
    }
    Ok(())
}

/// System matrices `A` (n×n), `B` (n×m) and disturbance covariance `W` (n×n).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    w: DMatrix<T>,
}

impl<T: Real> LinearDynamics<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, w: DMatrix<T>) -> Result<Self> {
        ensure_square(&a, "A")?;
        let n = a.nrows();
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B must have {n} rows, got {}",
                b.nrows()
            )));
        }
        ensure_shape(&w, n, n, "W")?;
        check_psd(&w, "W", 1e-10)?;
        Ok(Self { a, b, w })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn w(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_disturbance(&self, w: DMatrix<T>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), w)
    }

    /// Rank test on `[B, AB, …, A^{n-1}B]`.
    pub fn is_controllable(&self) -> bool {
        let n = self.n_states();
        let m = self.n_inputs();
        if n == 0 {
            return true;
        }
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut block = self.b.clone();
        for k in 0..n {
            ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
            block = &self.a * block;
        }
        let svd = ctrb.svd(false, false);
        let smax = svd.singular_values.max();
        let eps = T::lit(1e-10) * smax.max(T::one());
        svd.rank(eps) == n
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &Gain<T>) -> Result<DMatrix<T>> {
        self.check_gain(k)?;
        Ok(&self.a + &self.b * &k.0)
    }

    pub fn check_gain(&self, k: &Gain<T>) -> Result<()> {
        ensure_shape(&k.0, self.n_inputs(), self.n_states(), "K")
    }

    /// Stationary state covariance `X = F X Fᵀ + W` of the closed loop under `k`.
    pub fn stationary_covariance(&self, k: &Gain<T>) -> Result<DMatrix<T>> {
        let f = self.closed_loop(k)?;
        let rho = spectral_radius(&f)?;
        if rho >= T::one() - T::lit(STABILITY_MARGIN) {
            return Err(Error::Unstable {
                spectral_radius: rho.as_f64(),
            });
        }
        Ok(solve_stein(&f.transpose(), &self.w)?.x)
    }
}

/// Policy gain `K` (m×n), `u = K x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain<T: Real>(pub DMatrix<T>);

impl<T: Real> Gain<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        Gain(DMatrix::zeros(m, n))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.0 * x
    }
}

impl<T: Real> From<DMatrix<T>> for Gain<T> {
    fn from(m: DMatrix<T>) -> Self {
        Gain(m)
    }
}

/// State/input pairs `(xⁱ, uⁱ)`. Repeated states with different inputs are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet<T: Real> {
    states: Vec<DVector<T>>,
    inputs: Vec<DVector<T>>,
}

impl<T: Real> DemoSet<T> {
    pub fn new(states: Vec<DVector<T>>, inputs: Vec<DVector<T>>) -> Result<Self> {
        if states.len() != inputs.len() {
            return Err(Error::Dimension(format!(
                "{} states but {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::Validation("demonstration set is empty".into()));
        }
        let n = states[0].len();
        let m = inputs[0].len();
        if states.iter().any(|x| x.len() != n) || inputs.iter().any(|u| u.len() != m) {
            return Err(Error::Dimension("ragged demonstration vectors".into()));
        }
        Ok(Self { states, inputs })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn inputs(&self) -> &[DVector<T>] {
        &self.inputs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<T>, &DVector<T>)> {
        self.states.iter().zip(self.inputs.iter())
    }

    /// States stacked as columns, n×N.
    pub fn state_matrix(&self) -> DMatrix<T> {
        DMatrix::from_columns(&self.states)
    }

    /// Inputs stacked as columns, m×N.
    pub fn input_matrix(&self) -> DMatrix<T> {
        DMatrix::from_columns(&self.inputs)
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.n_states() != n || self.n_inputs() != m {
            return Err(Error::Dimension(format!(
                "demonstrations are {}-state/{}-input, expected {n}/{m}",
                self.n_states(),
                self.n_inputs()
            )));
        }
        Ok(())
    }
}

/// Stage-cost weights `xᵀQx + uᵀRu`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
}

impl<T: Real> CostMatrices<T> {
    /// `Q` must be symmetric PSD and `R` symmetric positive definite.
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        ensure_square(&q, "Q")?;
        ensure_square(&r, "R")?;
        check_psd(&q, "Q", 1e-10)?;
        check_symmetric(&r, "R")?;
        if min_eigenvalue(&r) <= T::zero() {
            return Err(Error::Validation("R is not positive definite".into()));
        }
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
        }
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    /// Rescales `(Q, R)` jointly so that `λ_min(R) = 1`; the optimal gain is unchanged.
    pub fn normalized(&self) -> Self {
        let s = min_eigenvalue(&self.r);
        Self {
            q: &self.q / s,
            r: &self.r / s,
        }
    }

    pub fn is_normalized(&self) -> bool {
        min_eigenvalue(&self.r) >= T::one() - T::tol(1e-8)
    }

    fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        ensure_shape(&self.q, n, n, "Q")?;
        ensure_shape(&self.r, m, m, "R")
    }
}

/// Average cost on the extended half-line; unstable loops map to [`Cost::Infinite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> Cost<T> {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match *self {
            Cost::Finite(v) => v.as_f64(),
            Cost::Infinite => f64::INFINITY,
        }
    }
}

impl<T: Real> std::fmt::Display for Cost<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => f.write_str("inf"),
        }
    }
}

fn is_stable<T: Real>(f: &DMatrix<T>) -> Result<(bool, T)> {
    let rho = spectral_radius(f)?;
    Ok((rho < T::one() - T::lit(STABILITY_MARGIN), rho))
}

/// Closed-loop value matrix `P_cl = Q + KᵀRK + Fᵀ P_cl F`, or `None` when unstable.
pub fn closed_loop_value<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    k: &Gain<T>,
) -> Result<Option<DMatrix<T>>> {
    cost.check_dims(dynamics.n_states(), dynamics.n_inputs())?;
    let f = dynamics.closed_loop(k)?;
    if !is_stable(&f)?.0 {
        return Ok(None);
    }
    let stage = cost.q() + k.0.transpose() * cost.r() * &k.0;
    let sol = solve_stein(&f, &linalg::symmetrize(&stage))?;
    if sol.relative_residual > T::tol(1e-9) {
        return Err(Error::NotConverged {
            solver: "closed-loop Lyapunov",
            iterations: sol.iterations,
            residual: sol.relative_residual.as_f64(),
        });
    }
    Ok(Some(sol.x))
}

/// Infinite-horizon average cost `trace(W P_cl)` of the policy `u = Kx`.
pub fn closed_loop_cost<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    k: &Gain<T>,
) -> Result<Cost<T>> {
    Ok(match closed_loop_value(dynamics, cost, k)? {
        Some(p) => Cost::Finite(linalg::trace_product(dynamics.w(), &p)),
        None => Cost::Infinite,
    })
}

/// Average cost of the noisy policy `u = Kx + z`, `z ~ N(0, Σ)` i.i.d.
///
/// The input noise enters the state as `B z`, so the closed loop sees
/// disturbance covariance `W + BΣBᵀ`, and the stage cost picks up `trace(RΣ)`.
pub fn noisy_policy_cost<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    k: &Gain<T>,
    input_noise: &DMatrix<T>,
) -> Result<Cost<T>> {
    ensure_shape(input_noise, dynamics.n_inputs(), dynamics.n_inputs(), "Σ")?;
    check_psd(input_noise, "Σ", 1e-10)?;
    Ok(match closed_loop_value(dynamics, cost, k)? {
        Some(p) => {
            let b = dynamics.b();
            let w_eff = dynamics.w() + b * input_noise * b.transpose();
            Cost::Finite(
                linalg::trace_product(&w_eff, &p) + linalg::trace_product(cost.r(), input_noise),
            )
        }
        None => Cost::Infinite,
    })
}

fn standard_normal<T: Real, R: Rng>(rng: &mut R, len: usize) -> DVector<T> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))),
    )
}

/// Monte-Carlo estimate of the average cost from a single trajectory of length
/// `horizon`, started from the stationary distribution.
pub fn rollout_cost_estimate<T: Real>(
    dynamics: &LinearDynamics<T>,
    cost: &CostMatrices<T>,
    k: &Gain<T>,
    horizon: usize,
    seed: u64,
) -> Result<T> {
    if horizon == 0 {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    cost.check_dims(dynamics.n_states(), dynamics.n_inputs())?;
    let f = dynamics.closed_loop(k)?;
    let (stable, rho) = is_stable(&f)?;
    if !stable {
        return Err(Error::Unstable {
            spectral_radius: rho.as_f64(),
        });
    }
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_cov = solve_stein(&f.transpose(), dynamics.w())?.x;
    let w_half = psd_sqrt(dynamics.w());

    let mut x = psd_sqrt(&x_cov) * standard_normal::<T, _>(&mut rng, n);
    let mut next = DVector::zeros(n);
    let mut u = DVector::zeros(m);
    let mut qx = DVector::zeros(n);
    let mut ru = DVector::zeros(m);
    let mut noise = DVector::zeros(n);
    let mut total = T::zero();
    for _ in 0..horizon {
        u.gemv(T::one(), k.matrix(), &x, T::zero());
        qx.gemv(T::one(), cost.q(), &x, T::zero());
        ru.gemv(T::one(), cost.r(), &u, T::zero());
        total += x.dot(&qx) + u.dot(&ru);
        for v in noise.iter_mut() {
            *v = T::lit(rng.sample::<f64, _>(StandardNormal));
        }
        next.gemv(T::one(), &f, &x, T::zero());
        next.gemv(T::one(), &w_half, &noise, T::one());
        std::mem::swap(&mut x, &mut next);
    }
    Ok(total / T::from_usize(horizon).expect("horizon fits scalar"))
}

/// How demonstration states are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSampling {
    /// i.i.d. from the expert's stationary closed-loop distribution.
    #[default]
    Stationary,
    /// i.i.d. standard normal.
    StandardNormal,
}

/// Draws `count` noisy expert demonstrations `uⁱ = K* xⁱ + zⁱ`, `zⁱ ~ N(0, Σ)`,
/// then flips the sign of each input entry independently with probability
/// `outlier_prob`.
pub fn generate_demos<T: Real>(
    dynamics: &LinearDynamics<T>,
    expert: &Gain<T>,
    input_noise: &DMatrix<T>,
    count: usize,
    outlier_prob: f64,
    seed: u64,
    sampling: StateSampling,
) -> Result<DemoSet<T>> {
    if count == 0 {
        return Err(Error::Validation("need at least one demonstration".into()));
    }
    if !(0.0..=1.0).contains(&outlier_prob) {
        return Err(Error::Validation(format!(
            "outlier probability {outlier_prob} outside [0, 1]"
        )));
    }
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    ensure_shape(input_noise, m, m, "Σ")?;
    check_psd(input_noise, "Σ", 1e-10)?;
    // Stationary sampling requires a stable expert even when states are drawn otherwise.
    let x_cov = dynamics.stationary_covariance(expert)?;
    let state_half = match sampling {
        StateSampling::Stationary => psd_sqrt(&x_cov),
        StateSampling::StandardNormal => DMatrix::identity(n, n),
    };
    let noise_half = psd_sqrt(input_noise);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(count);
    let mut inputs = Vec::with_capacity(count);
    for _ in 0..count {
        let x = &state_half * standard_normal::<T, _>(&mut rng, n);
        let z = &noise_half * standard_normal::<T, _>(&mut rng, m);
        let mut u = expert.apply(&x) + z;
        for v in u.iter_mut() {
            let draw: f64 = rng.random();
            if draw < outlier_prob {
                *v = -*v;
            }
        }
        states.push(x);
        inputs.push(u);
    }
    DemoSet::new(states, inputs)
}
