//! Convex subproblems shared by plain policy fitting and the ADMM iteration:
//! PSD projection, Huber penalty, the regularised least-squares problem in
//! `K`, and cone-constrained least squares in `(P, Q, R)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, map_eigenvalues, symmetrize};
use crate::linsys::{DemoSet, Gain, LinearDynamics};
use crate::scalar::Real;

/// Per-demonstration loss `l(Kx, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `‖Kx − u‖²`
    Quadratic,
    /// `Σ_j φ_M((Kx − u)_j)`
    Huber { m: f64 },
}

impl LossSpec {
    pub fn huber(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Validation(format!("Huber parameter must be positive, got {m}")));
        }
        Ok(LossSpec::Huber { m })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Quadratic => Ok(()),
            LossSpec::Huber { m } => Self::huber(m).map(|_| ()),
        }
    }

    /// Loss of one residual vector `Kx − u`.
    pub fn residual_loss<T: Real>(&self, residual: &DVector<T>) -> T {
        match *self {
            LossSpec::Quadratic => residual.norm_squared(),
            LossSpec::Huber { m } => {
                let m = T::lit(m);
                residual.iter().fold(T::zero(), |acc, &a| acc + huber_value(a, m))
            }
        }
    }

    /// `L(K) = Σᵢ l(Kxⁱ, uⁱ)`.
    pub fn total<T: Real>(&self, k: &Gain<T>, demos: &DemoSet<T>) -> T {
        demos
            .iter()
            .fold(T::zero(), |acc, (x, u)| acc + self.residual_loss(&(k.apply(x) - u)))
    }
}

/// Regulariser on the gain. Only the ridge penalty `λ‖K‖_F²` is supported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerSpec {
    Ridge { weight: f64 },
}

impl RegularizerSpec {
    pub fn ridge(weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Validation(format!(
                "ridge weight must be nonnegative, got {weight}"
            )));
        }
        Ok(RegularizerSpec::Ridge { weight })
    }

    pub fn weight(&self) -> f64 {
        match *self {
            RegularizerSpec::Ridge { weight } => weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::ridge(self.weight()).map(|_| ())
    }

    pub fn value<T: Real>(&self, k: &Gain<T>) -> T {
        T::lit(self.weight()) * k.0.norm_squared()
    }
}

/// `L(K) + r(K)`.
pub fn fit_objective<T: Real>(
    k: &Gain<T>,
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
) -> T {
    loss.total(k, demos) + reg.value(k)
}

/// Frobenius-nearest symmetric matrix with every eigenvalue `≥ floor`.
///
/// The input is symmetrised first.
pub fn project_psd<T: Real>(s: &DMatrix<T>, floor: T) -> DMatrix<T> {
    map_eigenvalues(s, |l| if l < floor { floor } else { l })
}

/// Huber penalty: `a²/2` for `|a| ≤ M`, `M|a| − M²/2` otherwise.
pub fn huber_value<T: Real>(a: T, m: T) -> T {
    let abs = a.abs();
    if abs <= m {
        a * a * T::lit(0.5)
    } else {
        m * abs - m * m * T::lit(0.5)
    }
}

/// The augmented-Lagrangian terms the `K` step sees from the current
/// `(P, Q, R, Y)` iterate.
#[derive(Debug, Clone, Copy)]
pub struct AugmentedTerms<'a, T: Real> {
    pub dynamics: &'a LinearDynamics<T>,
    pub rho: T,
    pub p: &'a DMatrix<T>,
    pub q: &'a DMatrix<T>,
    pub r: &'a DMatrix<T>,
    pub y1: &'a DMatrix<T>,
    pub y2: &'a DMatrix<T>,
}

impl<T: Real> AugmentedTerms<'_, T> {
    /// `(G, C)` with the penalty equal to `ρ/2 ‖G K − C‖_F²`, where
    /// `G = [AᵀPB; R + BᵀPB]` and `C = [P − Q − AᵀPA − Y₁/ρ; −BᵀPA − Y₂/ρ]`.
    fn linear_form(&self) -> (DMatrix<T>, DMatrix<T>) {
        let dynamics = self.dynamics;
        let a = dynamics.a();
        let b = dynamics.b();
        let n = dynamics.n_states();
        let m = dynamics.n_inputs();
        let at_p = a.transpose() * self.p;
        let bt_p = b.transpose() * self.p;
        let mut g = DMatrix::zeros(n + m, m);
        g.rows_mut(0, n).copy_from(&(&at_p * b));
        g.rows_mut(n, m).copy_from(&(self.r + &bt_p * b));
        let mut c = DMatrix::zeros(n + m, n);
        c.rows_mut(0, n)
            .copy_from(&(self.p - self.q - &at_p * a - self.y1 / self.rho));
        c.rows_mut(n, m).copy_from(&(-(&bt_p * a) - self.y2 / self.rho));
        (g, c)
    }

    fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.dynamics.n_states() != n || self.dynamics.n_inputs() != m {
            return Err(Error::Dimension(
                "demonstrations do not match the system dimensions".into(),
            ));
        }
        ensure_shape(self.p, n, n, "P")?;
        ensure_shape(self.q, n, n, "Q")?;
        ensure_shape(self.r, m, m, "R")?;
        ensure_shape(self.y1, n, n, "Y1")?;
        ensure_shape(self.y2, m, n, "Y2")
    }

    fn is_active(&self) -> bool {
        self.rho > T::zero()
    }
}

/// Objective of the `K` step: `L(K) + r(K) + ρ/2 ‖[AᵀPBK − C₁; (R+BᵀPB)K − C₂]‖_F²`.
pub fn k_step_objective<T: Real>(
    k: &Gain<T>,
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
    terms: Option<&AugmentedTerms<'_, T>>,
) -> T {
    let base = fit_objective(k, demos, loss, reg);
    match terms {
        Some(t) if t.is_active() => {
            let (g, c) = t.linear_form();
            base + t.rho * T::lit(0.5) * (g * &k.0 - c).norm_squared()
        }
        _ => base,
    }
}

/// Minimises `Σᵢⱼ cᵢⱼ (Kxⁱ − uⁱ)ⱼ² + λ‖K‖² + ρ/2‖GK − C‖²` through the normal
/// equations in `vec(K)` (column-major).
fn weighted_least_squares<T: Real>(
    demos: &DemoSet<T>,
    weights: &DMatrix<T>,
    lambda: T,
    penalty: Option<(T, &DMatrix<T>, &DMatrix<T>)>,
    m: usize,
    n: usize,
) -> Result<DMatrix<T>> {
    let dim = m * n;
    let idx = |j: usize, l: usize| j + l * m;
    let xs = demos.state_matrix();
    let us = demos.input_matrix();
    let mut h = DMatrix::<T>::zeros(dim, dim);
    let mut rhs = DVector::<T>::zeros(dim);

    for j in 0..m {
        let cj = weights.row(j);
        for l in 0..n {
            for l2 in l..n {
                let mut s = T::zero();
                for i in 0..demos.len() {
                    s += cj[i] * xs[(l, i)] * xs[(l2, i)];
                }
                h[(idx(j, l), idx(j, l2))] += s;
                if l2 != l {
                    h[(idx(j, l2), idx(j, l))] += s;
                }
            }
            let mut s = T::zero();
            for i in 0..demos.len() {
                s += cj[i] * us[(j, i)] * xs[(l, i)];
            }
            rhs[idx(j, l)] += s;
            h[(idx(j, l), idx(j, l))] += lambda;
        }
    }

    if let Some((rho, g, c)) = penalty {
        let half = rho * T::lit(0.5);
        let gtg = g.transpose() * g;
        let gtc = g.transpose() * c;
        for l in 0..n {
            for j in 0..m {
                for j2 in 0..m {
                    h[(idx(j, l), idx(j2, l))] += half * gtg[(j, j2)];
                }
                rhs[idx(j, l)] += half * gtc[(j, l)];
            }
        }
    }

    let h = symmetrize(&h);
    let diag_max = h.diagonal().max();
    let chol = h.clone().cholesky().filter(|c| {
        let pivot_min = c.l_dirty().diagonal().min();
        pivot_min * pivot_min > T::lit(1e-13) * diag_max
    });
    let solution = match chol {
        Some(chol) => chol.solve(&rhs),
        None => {
            // Rank-deficient data with no regularisation: take the minimum-norm solution.
            let svd = h.clone().svd(true, true);
            let eps = T::lit(1e-12) * svd.singular_values.max().max(T::one());
            let v = svd.solve(&rhs, eps).map_err(|_| Error::SingularNormalEquations)?;
            let resid = (&h * &v - &rhs).norm();
            if resid > T::tol(1e-8) * (T::one() + rhs.norm()) {
                return Err(Error::SingularNormalEquations);
            }
            v
        }
    };
    if !solution.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularNormalEquations);
    }
    Ok(DMatrix::from_column_slice(m, n, solution.as_slice()))
}

/// IRLS stopping rule for the Huber `K` step.
const IRLS_TOL: f64 = 1e-9;
const IRLS_MAX_ITER: usize = 100;

/// Global minimiser of the convex `K`-step objective. Pass `terms = None`
/// (or `ρ = 0`) for plain policy fitting; dimensions come from `demos`.
///
/// Quadratic loss is a single linear solve. Huber loss runs iteratively
/// reweighted least squares around the same solve, with weights
/// `min(1, M/|r|)` per residual entry.
pub fn solve_k_step<T: Real>(
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
    terms: Option<&AugmentedTerms<'_, T>>,
) -> Result<Gain<T>> {
    loss.validate()?;
    reg.validate()?;
    let n = demos.n_states();
    let m = demos.n_inputs();
    let lambda = T::lit(reg.weight());
    let linear = match terms {
        Some(t) => {
            if t.rho < T::zero() {
                return Err(Error::Validation("ρ must be nonnegative".into()));
            }
            t.check_dims(n, m)?;
            t.is_active().then(|| (t.rho, t.linear_form()))
        }
        None => None,
    };
    let penalty = linear.as_ref().map(|(rho, (g, c))| (*rho, g, c));

    match *loss {
        LossSpec::Quadratic => {
            let weights = DMatrix::from_element(m, demos.len(), T::one());
            weighted_least_squares(demos, &weights, lambda, penalty, m, n).map(Gain)
        }
        LossSpec::Huber { m: huber_m } => {
            let huber_m = T::lit(huber_m);
            let half = T::lit(0.5);
            let mut weights = DMatrix::from_element(m, demos.len(), half);
            let mut k = weighted_least_squares(demos, &weights, lambda, penalty, m, n)?;
            let tol = T::tol(IRLS_TOL);
            for _ in 0..IRLS_MAX_ITER {
                for (i, (x, u)) in demos.iter().enumerate() {
                    let r = &k * x - u;
                    for j in 0..m {
                        let a = r[j].abs();
                        weights[(j, i)] = if a <= huber_m { half } else { half * huber_m / a };
                    }
                }
                let next = weighted_least_squares(demos, &weights, lambda, penalty, m, n)?;
                let change = (&next - &k).norm();
                k = next;
                if change < tol * (T::one() + k.norm()) {
                    break;
                }
            }
            Ok(Gain(k))
        }
    }
}

/// Stopping controls for the `(P, Q, R)` step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqrOptions {
    /// Primal/dual residual tolerance of the splitting iteration, relative to
    /// the iterate scale.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop as soon as the objective drops to this value.
    pub target_objective: f64,
}

impl Default for PqrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            target_objective: 0.0,
        }
    }
}

/// Cone-feasible `(P, Q, R)` returned by [`solve_pqr_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct PqrSolution<T: Real> {
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    /// `‖[Q + AᵀPF − P + Y₁/ρ; RK + BᵀPF + Y₂/ρ]‖_F²` at the returned point.
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    /// `‖gradient mapping‖ · (1 + ‖(P, Q, R)‖)` at the returned point: a rough
    /// estimate of the gap to the constrained optimum.
    pub suboptimality: T,
    /// Inner iteration state at exit, for resuming a nearby solve.
    pub splitting: Splitting<T>,
}

/// Scaled dual and penalty of the inner splitting iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Splitting<T: Real> {
    dual: DVector<T>,
    sigma: T,
}

/// Starting point for [`solve_pqr_step`].
#[derive(Debug, Clone, Copy)]
pub struct PqrWarmStart<'a, T: Real> {
    pub p: &'a DMatrix<T>,
    pub q: &'a DMatrix<T>,
    pub r: &'a DMatrix<T>,
    pub splitting: Option<&'a Splitting<T>>,
}

/// Dual variables and penalty entering the `(P, Q, R)` step.
#[derive(Debug, Clone, Copy)]
pub struct DualTerms<'a, T: Real> {
    pub y1: &'a DMatrix<T>,
    pub y2: &'a DMatrix<T>,
    pub rho: T,
}

/// Stacked constraint residual blocks `(Q + AᵀPF − P + Y₁/ρ, RK + BᵀPF + Y₂/ρ)`,
/// `F = A + BK`. With `duals = None` these are the Kalman constraint blocks.
pub fn constraint_blocks<T: Real>(
    dynamics: &LinearDynamics<T>,
    k: &Gain<T>,
    p: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    duals: Option<&DualTerms<'_, T>>,
) -> (DMatrix<T>, DMatrix<T>) {
    let f = dynamics.a() + dynamics.b() * &k.0;
    let pf = p * &f;
    let mut m1 = q + dynamics.a().transpose() * &pf - p;
    let mut m2 = r * &k.0 + dynamics.b().transpose() * &pf;
    if let Some(d) = duals {
        m1 += d.y1 / d.rho;
        m2 += d.y2 / d.rho;
    }
    (m1, m2)
}

/// Objective of the `(P, Q, R)` step at the given point.
pub fn pqr_objective<T: Real>(
    dynamics: &LinearDynamics<T>,
    k: &Gain<T>,
    p: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    duals: Option<&DualTerms<'_, T>>,
) -> T {
    let (m1, m2) = constraint_blocks(dynamics, k, p, q, r, duals);
    m1.norm_squared() + m2.norm_squared()
}

/// Isometric half-vectorisation of symmetric matrices: off-diagonal entries
/// carry a `√2` so that `⟨svec X, svec Y⟩ = tr(XY)`.
fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn svec_into<T: Real>(s: &DMatrix<T>, out: &mut [T]) {
    let n = s.nrows();
    let sqrt2 = T::lit(std::f64::consts::SQRT_2);
    let mut idx = 0;
    for j in 0..n {
        out[idx] = s[(j, j)];
        idx += 1;
        for i in (j + 1)..n {
            out[idx] = (s[(i, j)] + s[(j, i)]) * T::lit(0.5) * sqrt2;
            idx += 1;
        }
    }
}

fn smat<T: Real>(v: &[T], n: usize) -> DMatrix<T> {
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut s = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        s[(j, j)] = v[idx];
        idx += 1;
        for i in (j + 1)..n {
            let x = v[idx] * inv_sqrt2;
            s[(i, j)] = x;
            s[(j, i)] = x;
            idx += 1;
        }
    }
    s
}

/// `(P, Q, R)` packed as one vector in `svec` coordinates.
struct PqrLayout {
    n: usize,
    m: usize,
}

impl PqrLayout {
    fn dim(&self) -> usize {
        2 * svec_len(self.n) + svec_len(self.m)
    }

    fn split<'v, T>(&self, z: &'v [T]) -> (&'v [T], &'v [T], &'v [T]) {
        let dn = svec_len(self.n);
        (&z[..dn], &z[dn..2 * dn], &z[2 * dn..])
    }

    fn pack<T: Real>(&self, p: &DMatrix<T>, q: &DMatrix<T>, r: &DMatrix<T>) -> DVector<T> {
        let dn = svec_len(self.n);
        let mut z = DVector::zeros(self.dim());
        svec_into(p, &mut z.as_mut_slice()[..dn]);
        svec_into(q, &mut z.as_mut_slice()[dn..2 * dn]);
        svec_into(r, &mut z.as_mut_slice()[2 * dn..]);
        z
    }

    fn unpack<T: Real>(&self, z: &DVector<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let (p, q, r) = self.split(z.as_slice());
        (smat(p, self.n), smat(q, self.n), smat(r, self.m))
    }

    /// Projection onto `{P ⪰ 0} × {Q ⪰ 0} × {R ⪰ I}`.
    fn project<T: Real>(&self, z: &DVector<T>) -> DVector<T> {
        let (p, q, r) = self.unpack(z);
        self.pack(
            &project_psd(&p, T::zero()),
            &project_psd(&q, T::zero()),
            &project_psd(&r, T::one()),
        )
    }
}

/// The `(P, Q, R)` objective as an explicit least-squares problem
/// `‖A_op z + c‖²` in `svec` coordinates.
struct PqrLeastSquares<T: Real> {
    layout: PqrLayout,
    op: DMatrix<T>,
    offset: DVector<T>,
}

impl<T: Real> PqrLeastSquares<T> {
    fn new(dynamics: &LinearDynamics<T>, k: &Gain<T>, duals: Option<&DualTerms<'_, T>>) -> Self {
        let n = dynamics.n_states();
        let m = dynamics.n_inputs();
        let layout = PqrLayout { n, m };
        let d = layout.dim();
        let rows = (n + m) * n;
        let zero_n = DMatrix::zeros(n, n);
        let zero_m = DMatrix::zeros(m, m);
        let stack = |m1: DMatrix<T>, m2: DMatrix<T>| {
            let mut v = DMatrix::zeros(n + m, n);
            v.rows_mut(0, n).copy_from(&m1);
            v.rows_mut(n, m).copy_from(&m2);
            DVector::from_column_slice(v.as_slice())
        };
        let (c1, c2) = constraint_blocks(dynamics, k, &zero_n, &zero_n, &zero_m, duals);
        let offset = stack(c1, c2);
        let mut op = DMatrix::zeros(rows, d);
        let mut basis = DVector::zeros(d);
        for col in 0..d {
            basis[col] = T::one();
            let (p, q, r) = layout.unpack(&basis);
            let (m1, m2) = constraint_blocks(dynamics, k, &p, &q, &r, None);
            op.set_column(col, &stack(m1, m2));
            basis[col] = T::zero();
        }
        Self { layout, op, offset }
    }

    fn objective(&self, z: &DVector<T>) -> T {
        (&self.op * z + &self.offset).norm_squared()
    }

    fn gradient(&self, z: &DVector<T>) -> DVector<T> {
        self.op.tr_mul(&(&self.op * z + &self.offset)) * T::lit(2.0)
    }
}

/// Range of `X − floor·I` above a small threshold: the face of the cone
/// containing `X` is `{floor·I + V S Vᵀ : S ⪰ 0}`.
fn face_basis<T: Real>(x: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let n = x.nrows();
    let shifted = x - DMatrix::identity(n, n) * floor;
    let (values, vectors) = crate::linalg::sym_eigen(&shifted);
    let thr = T::tol(1e-9) * (T::one() + x.norm());
    let keep: Vec<usize> = (0..n).filter(|&i| values[i] > thr).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| vectors[(i, keep[j])])
}

/// Least squares restricted to the face of the cones containing `z`, followed
/// by a backtracking step that stays on the face. Returns an improved point,
/// if any.
fn polish_on_face<T: Real>(ls: &PqrLeastSquares<T>, z: &DVector<T>) -> Option<(DVector<T>, T)> {
    let layout = &ls.layout;
    let (p, q, r) = layout.unpack(z);
    let floors = [T::zero(), T::zero(), T::one()];
    let blocks = [&p, &q, &r];
    let bases: Vec<DMatrix<T>> = blocks
        .iter()
        .zip(floors)
        .map(|(x, f)| face_basis(x, f))
        .collect();
    let face_dims: Vec<usize> = bases.iter().map(|v| svec_len(v.ncols())).collect();
    let face_dim: usize = face_dims.iter().sum();
    if face_dim == 0 {
        return None;
    }
    let n = layout.n;
    let m = layout.m;
    let lift = |coords: &DVector<T>| -> DVector<T> {
        let mut mats = Vec::with_capacity(3);
        let mut at = 0;
        for (b, (v, &fd)) in bases.iter().zip(&face_dims).enumerate() {
            let s_block = smat(&coords.as_slice()[at..at + fd], v.ncols());
            at += fd;
            let size = if b == 2 { m } else { n };
            mats.push(DMatrix::identity(size, size) * floors[b] + v * s_block * v.transpose());
        }
        layout.pack(&mats[0], &mats[1], &mats[2])
    };
    let mut current = DVector::zeros(face_dim);
    let mut at = 0;
    for ((v, x), (&fd, f)) in bases.iter().zip(blocks).zip(face_dims.iter().zip(floors)) {
        let size = x.nrows();
        let s_block = v.transpose() * (x - DMatrix::identity(size, size) * f) * v;
        svec_into(&s_block, &mut current.as_mut_slice()[at..at + fd]);
        at += fd;
    }

    let origin = lift(&DVector::zeros(face_dim));
    let mut face_op = DMatrix::zeros(ls.op.nrows(), face_dim);
    let mut unit = DVector::zeros(face_dim);
    for col in 0..face_dim {
        unit[col] = T::one();
        face_op.set_column(col, &(&ls.op * (lift(&unit) - &origin)));
        unit[col] = T::zero();
    }
    let residual = &face_op * &current + &ls.op * &origin + &ls.offset;
    let svd = face_op.svd(true, true);
    let rank_tol = T::tol(1e-12) * svd.singular_values.max();
    let step = -svd.solve(&residual, rank_tol).ok()?;

    let start_value = ls.objective(z);
    let mut t = T::one();
    for _ in 0..12 {
        let trial = &current + &step * t;
        let mut projected = DVector::zeros(face_dim);
        let mut at = 0;
        for (v, &fd) in bases.iter().zip(&face_dims) {
            let s_block = smat(&trial.as_slice()[at..at + fd], v.ncols());
            svec_into(&project_psd(&s_block, T::zero()), &mut projected.as_mut_slice()[at..at + fd]);
            at += fd;
        }
        let candidate = layout.project(&lift(&projected));
        let value = ls.objective(&candidate);
        if value < start_value {
            return Some((candidate, value));
        }
        t *= T::lit(0.5);
    }
    None
}

/// Minimises `‖[Q + AᵀPF − P + Y₁/ρ; RK + BᵀPF + Y₂/ρ]‖_F²` over symmetric
/// `P ⪰ 0, Q ⪰ 0, R ⪰ I` for fixed `K`.
///
/// The objective is assembled as an explicit least-squares operator on the
/// half-vectorised `(P, Q, R)` and minimised by operator splitting: an exact
/// regularised linear solve, a projection onto the cones, and a scaled dual
/// update, with the splitting penalty rebalanced from the residual ratio.
/// The splitting map is Anderson-accelerated, and every few hundred
/// iterations the best point is polished by least squares on its cone face.
/// `warm` seeds the iteration; the default start is `(0, 0, I)`. Hitting
/// `max_iter` is not an error: the best cone-feasible iterate is returned with
/// `converged = false`.
pub fn solve_pqr_step<T: Real>(
    dynamics: &LinearDynamics<T>,
    k: &Gain<T>,
    duals: Option<&DualTerms<'_, T>>,
    warm: Option<&PqrWarmStart<'_, T>>,
    options: &PqrOptions,
) -> Result<PqrSolution<T>> {
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    dynamics.check_gain(k)?;
    if let Some(d) = duals {
        if d.rho <= T::zero() {
            return Err(Error::Validation("ρ must be positive".into()));
        }
        ensure_shape(d.y1, n, n, "Y1")?;
        ensure_shape(d.y2, m, n, "Y2")?;
    }
    let ls = PqrLeastSquares::new(dynamics, k, duals);
    let layout = &ls.layout;
    let d = layout.dim();
    let start = match warm {
        Some(ws) => {
            ensure_shape(ws.p, n, n, "P")?;
            ensure_shape(ws.q, n, n, "Q")?;
            ensure_shape(ws.r, m, m, "R")?;
            layout.project(&layout.pack(ws.p, ws.q, ws.r))
        }
        None => layout.pack(
            &DMatrix::zeros(n, n),
            &DMatrix::zeros(n, n),
            &DMatrix::identity(m, m),
        ),
    };

    let two = T::lit(2.0);
    let hessian = ls.op.tr_mul(&ls.op) * two;
    let linear = ls.op.tr_mul(&ls.offset) * two;
    let target = T::lit(options.target_objective);
    let tol = T::tol(options.tol);
    let sqrt_d = T::from_usize(d).expect("dimension fits scalar").sqrt();

    let mut w = start;
    let mut best = w.clone();
    let mut best_value = ls.objective(&w);
    let mut converged = best_value <= target;
    let resume = warm
        .and_then(|ws| ws.splitting)
        .filter(|sp| sp.dual.len() == d && sp.sigma > T::zero());
    let (mut u, mut sigma) = match resume {
        Some(sp) => (sp.dual.clone(), sp.sigma),
        None => {
            // Scale the splitting penalty to the curvature of the least-squares term.
            let trace = hessian.trace() / T::from_usize(d.max(1)).expect("dimension fits scalar");
            let sigma = if trace > T::zero() { trace } else { T::one() };
            (DVector::<T>::zeros(d), sigma)
        }
    };
    let mut factor = factor_shifted(&hessian, sigma)?;
    let mut iterations = 0;
    // The splitting iteration is a fixed-point map on the stacked `(w, u)`;
    // Anderson extrapolation is applied on top of it and undone whenever it
    // fails to shrink the fixed-point residual.
    let mut state = stack(&w, &u);
    let mut anderson = Anderson::new(ANDERSON_MEMORY);
    let mut fallback: Option<(DVector<T>, T)> = None;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let w_in = state.rows(0, d).into_owned();
        let u_in = state.rows(d, d).into_owned();
        let rhs = (&w_in - &u_in) * sigma - &linear;
        let z = factor.solve(&rhs);
        w = layout.project(&(&z + &u_in));
        u = &u_in + &z - &w;

        let value = ls.objective(&w);
        if value < best_value {
            best_value = value;
            best.copy_from(&w);
        }
        if best_value <= target {
            converged = true;
            break;
        }

        let mapped = stack(&w, &u);
        let residual = &mapped - &state;
        let residual_norm = residual.norm();
        if let Some((plain, reference)) = fallback.take() {
            if residual_norm > reference {
                state = plain;
                anderson.reset();
                continue;
            }
        }

        let primal = (&z - &w).norm();
        let dual = (&w - &w_in).norm() * sigma;
        let eps_primal = tol * (sqrt_d + z.norm().max(w.norm()));
        let eps_dual = tol * (sqrt_d + (&u * sigma).norm());
        if primal <= eps_primal && dual <= eps_dual {
            converged = true;
            break;
        }
        if iterations % 25 == 0 {
            let ratio = (primal / eps_primal) / (dual / eps_dual).max(T::default_epsilon());
            if ratio > T::lit(10.0) || ratio < T::lit(0.1) {
                let scale = ratio.sqrt().min(T::lit(1e3)).max(T::lit(1e-3));
                sigma *= scale;
                u /= scale;
                factor = factor_shifted(&hessian, sigma)?;
                state = stack(&w, &u);
                anderson.reset();
                continue;
            }
        }
        if iterations % POLISH_PERIOD == 0 {
            if let Some((zp, value)) = polish_on_face(&ls, &best) {
                best = zp;
                best_value = value;
                if best_value <= target {
                    converged = true;
                    break;
                }
                state = stack(&best, &u);
                anderson.reset();
                continue;
            }
        }
        match anderson.extrapolate(&state, &residual) {
            Some(next) => {
                fallback = Some((mapped, residual_norm));
                state = next;
            }
            None => state = mapped,
        }
    }

    if !converged {
        for _ in 0..5 {
            match polish_on_face(&ls, &best) {
                Some((z, value)) => {
                    let gain = best_value - value;
                    best = z;
                    best_value = value;
                    if gain < T::lit(0.01) * (best_value + gain) {
                        break;
                    }
                }
                None => break,
            }
            if best_value <= target {
                converged = true;
                break;
            }
        }
    }

    // Projected-gradient mapping at the returned point as a quality estimate.
    let lip = hessian.norm().max(T::default_epsilon());
    let grad = ls.gradient(&best);
    let gmap = (&best - layout.project(&(&best - grad / lip))).norm() * lip;
    let (p, q, r) = layout.unpack(&best);
    let scale = T::one() + best.norm();
    Ok(PqrSolution {
        objective: best_value,
        p,
        q,
        r,
        iterations,
        converged,
        suboptimality: gmap * scale,
        splitting: Splitting { dual: u, sigma },
    })
}

fn stack<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

const ANDERSON_MEMORY: usize = 8;
const POLISH_PERIOD: usize = 250;

/// Type-II Anderson acceleration of a fixed-point map `x ↦ x + g(x)`.
struct Anderson<T: Real> {
    memory: usize,
    points: std::collections::VecDeque<DVector<T>>,
    residuals: std::collections::VecDeque<DVector<T>>,
}

impl<T: Real> Anderson<T> {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            points: Default::default(),
            residuals: Default::default(),
        }
    }

    fn reset(&mut self) {
        self.points.clear();
        self.residuals.clear();
    }

    /// Records `(x, g(x))` and returns the extrapolated next point, or `None`
    /// while the history is too short or the least-squares fit is degenerate.
    fn extrapolate(&mut self, x: &DVector<T>, g: &DVector<T>) -> Option<DVector<T>> {
        self.points.push_back(x.clone());
        self.residuals.push_back(g.clone());
        if self.points.len() > self.memory + 1 {
            self.points.pop_front();
            self.residuals.pop_front();
        }
        let k = self.points.len() - 1;
        if k == 0 {
            return None;
        }
        let len = x.len();
        let mut dx = DMatrix::zeros(len, k);
        let mut dg = DMatrix::zeros(len, k);
        for j in 0..k {
            dx.set_column(j, &(&self.points[j + 1] - &self.points[j]));
            dg.set_column(j, &(&self.residuals[j + 1] - &self.residuals[j]));
        }
        let mut gram = dg.tr_mul(&dg);
        let reg = T::lit(1e-10) * gram.norm() + T::default_epsilon();
        for i in 0..k {
            gram[(i, i)] += reg;
        }
        let gamma = gram.cholesky()?.solve(&dg.tr_mul(g));
        if !gamma.iter().all(|v| v.is_finite()) {
            self.reset();
            return None;
        }
        Some(x + g - (dx + dg) * gamma)
    }
}

fn factor_shifted<T: Real>(
    hessian: &DMatrix<T>,
    sigma: T,
) -> Result<nalgebra::Cholesky<T, nalgebra::Dyn>> {
    let mut shifted = hessian.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += sigma;
    }
    shifted
        .cholesky()
        .ok_or_else(|| Error::Validation("splitting system is not positive definite".into()))
}
