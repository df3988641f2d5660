//! Policy fitting under a Kalman constraint: fit `K` to demonstrations while
//! requiring it to be LQR-optimal for some `Q ⪰ 0, R ⪰ I`. Solved with the
//! ADMM heuristic below, restarted from several initialisations.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conic_ls::{
    constraint_blocks, fit_objective, solve_k_step, solve_pqr_step, AugmentedTerms, DualTerms,
    LossSpec, PqrOptions, PqrWarmStart, RegularizerSpec, Splitting,
};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::linsys::{CostMatrices, DemoSet, Gain, LinearDynamics};
use crate::riccati::{solve_lqr, KalmanCertificate};
use crate::scalar::Real;

/// ADMM parameters. Inner tolerances apply to the `(P, Q, R)` step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho: f64,
    pub n_iter: usize,
    /// Stop once `‖K⁺ − K‖_F < eps`.
    pub eps: f64,
    pub n_random_inits: usize,
    pub seed: u64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            n_iter: 200,
            eps: 1e-6,
            n_random_inits: 5,
            seed: 0,
            inner_tol: 1e-10,
            inner_max_iter: 500,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Validation(format!("rho must be positive, got {}", self.rho)));
        }
        if self.n_iter == 0 {
            return Err(Error::Validation("n_iter must be at least 1".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Validation(format!("eps must be nonnegative, got {}", self.eps)));
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return Err(Error::Validation("inner solver tolerances must be positive".into()));
        }
        Ok(())
    }

    fn pqr_options(&self) -> PqrOptions {
        PqrOptions {
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
            target_objective: 0.0,
        }
    }
}

/// One ADMM iterate `(K, P, Q, R, Y₁, Y₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T: Real> {
    pub k: Gain<T>,
    pub p: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub y1: DMatrix<T>,
    pub y2: DMatrix<T>,
    pub iter: usize,
    /// Inner-solver state carried between `(P, Q, R)` steps.
    pub splitting: Option<Splitting<T>>,
}

impl<T: Real> AdmmState<T> {
    /// `K = 0, P = 0, Q = 0, R = I, Y = 0`.
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            k: Gain::zeros(m, n),
            p: DMatrix::zeros(n, n),
            q: DMatrix::zeros(n, n),
            r: DMatrix::identity(m, m),
            y1: DMatrix::zeros(n, n),
            y2: DMatrix::zeros(m, n),
            iter: 0,
            splitting: None,
        }
    }

    /// Standard normal `K`; `P = GGᵀ/n`, `Q = HHᵀ/n`, `R = I + JJᵀ/m` with
    /// standard normal `G, H, J`; `Y = 0`. The `K` step ignores `K⁰`, so the
    /// random cost matrices are what make the starts differ.
    pub fn random(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut normal = |rows: usize, cols: usize| {
            DMatrix::from_fn(rows, cols, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                T::lit(v)
            })
        };
        let k = normal(m, n);
        let g = normal(n, n);
        let h = normal(n, n);
        let j = normal(m, m);
        let nf = T::lit(n as f64);
        let mf = T::lit(m as f64);
        Self {
            k: Gain(k),
            p: symmetrize(&(&g * g.transpose() / nf)),
            q: symmetrize(&(&h * h.transpose() / nf)),
            r: symmetrize(&(DMatrix::identity(m, m) + &j * j.transpose() / mf)),
            y1: DMatrix::zeros(n, n),
            y2: DMatrix::zeros(m, n),
            iter: 0,
            splitting: None,
        }
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        use crate::linalg::ensure_shape;
        ensure_shape(&self.k.0, m, n, "K")?;
        ensure_shape(&self.p, n, n, "P")?;
        ensure_shape(&self.q, n, n, "Q")?;
        ensure_shape(&self.r, m, m, "R")?;
        ensure_shape(&self.y1, n, n, "Y1")?;
        ensure_shape(&self.y2, m, n, "Y2")
    }

    fn is_finite(&self) -> bool {
        [&self.k.0, &self.p, &self.q, &self.r, &self.y1, &self.y2]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// One sweep: `K` step, `(P, Q, R)` step, then `Y ← Y + ρM` with `M` taken
/// at the new iterates.
pub fn admm_iterate<T: Real>(
    state: &AdmmState<T>,
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
    dynamics: &LinearDynamics<T>,
    config: &AdmmConfig,
) -> Result<AdmmState<T>> {
    config.validate()?;
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    state.check_dims(n, m)?;
    demos.check_dims(n, m)?;
    let rho = T::lit(config.rho);
    let wrap = |source: Error| Error::Iteration {
        iteration: state.iter,
        source: Box::new(source),
    };

    let terms = AugmentedTerms {
        dynamics,
        rho,
        p: &state.p,
        q: &state.q,
        r: &state.r,
        y1: &state.y1,
        y2: &state.y2,
    };
    let k = solve_k_step(demos, loss, reg, Some(&terms)).map_err(wrap)?;

    let duals = DualTerms {
        y1: &state.y1,
        y2: &state.y2,
        rho,
    };
    let pqr = solve_pqr_step(
        dynamics,
        &k,
        Some(&duals),
        Some(&PqrWarmStart {
            p: &state.p,
            q: &state.q,
            r: &state.r,
            splitting: state.splitting.as_ref(),
        }),
        &config.pqr_options(),
    )
    .map_err(wrap)?;

    let (m1, m2) = constraint_blocks(dynamics, &k, &pqr.p, &pqr.q, &pqr.r, None);
    Ok(AdmmState {
        k,
        p: pqr.p,
        q: pqr.q,
        r: pqr.r,
        y1: &state.y1 + m1 * rho,
        y2: &state.y2 + m2 * rho,
        iter: state.iter + 1,
        splitting: Some(pqr.splitting),
    })
}

/// Outcome of a single start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// `0` is the zero start, `1..` the random ones.
    pub init_index: usize,
    pub objective: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanFitReport<T: Real> {
    /// Final ADMM gain of the winning run.
    pub k: Gain<T>,
    /// LQR gain re-solved from the winning `(Q, R)`; `None` if that solve failed.
    pub k_certified: Option<Gain<T>>,
    /// Final `(P, Q, R)` and its Kalman residual against `k`.
    pub certificate: KalmanCertificate<T>,
    /// Riccati solution for the recovered cost, checked against `k_certified`.
    pub certified_certificate: Option<KalmanCertificate<T>>,
    /// `L(K) + r(K)`.
    pub objective: T,
    pub converged: bool,
    pub iterations: usize,
    pub init_index: usize,
    pub runs: Vec<RunSummary>,
}

impl<T: Real> KalmanFitReport<T> {
    /// The certified gain if available, else the ADMM gain.
    pub fn preferred_gain(&self, certify: bool) -> &Gain<T> {
        match (&self.k_certified, certify) {
            (Some(k), true) => k,
            _ => &self.k,
        }
    }
}

struct RunResult<T: Real> {
    state: AdmmState<T>,
    objective: T,
    converged: bool,
}

fn run_admm<T: Real>(
    mut state: AdmmState<T>,
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
    dynamics: &LinearDynamics<T>,
    config: &AdmmConfig,
) -> Result<RunResult<T>> {
    let eps = T::lit(config.eps);
    let mut converged = false;
    while state.iter < config.n_iter {
        let next = admm_iterate(&state, demos, loss, reg, dynamics, config)?;
        if !next.is_finite() {
            return Err(Error::Iteration {
                iteration: state.iter,
                source: Box::new(Error::Validation("iterate became non-finite".into())),
            });
        }
        let change = (&next.k.0 - &state.k.0).norm();
        state = next;
        if change < eps {
            converged = true;
            break;
        }
    }
    let objective = fit_objective(&state.k, demos, loss, reg);
    if !objective.is_finite() {
        return Err(Error::Validation("objective is not finite".into()));
    }
    Ok(RunResult {
        state,
        objective,
        converged,
    })
}

/// Per-start random stream: the master seed with the start index as the
/// ChaCha stream id.
pub fn init_rng(seed: u64, init_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(init_index as u64);
    rng
}

/// Runs ADMM from the zero start and `config.n_random_inits` random starts
/// and keeps the run whose final `K` has the lowest `L(K) + r(K)` (ties go to
/// the lower start index). Runs that fail numerically are recorded in
/// [`KalmanFitReport::runs`]; only if every run fails is an error returned.
pub fn fit_kalman<T: Real>(
    demos: &DemoSet<T>,
    loss: &LossSpec,
    reg: &RegularizerSpec,
    dynamics: &LinearDynamics<T>,
    config: &AdmmConfig,
) -> Result<KalmanFitReport<T>> {
    config.validate()?;
    loss.validate()?;
    reg.validate()?;
    let n = dynamics.n_states();
    let m = dynamics.n_inputs();
    demos.check_dims(n, m)?;

    let mut runs = Vec::with_capacity(config.n_random_inits + 1);
    let mut best: Option<(usize, RunResult<T>)> = None;
    for init_index in 0..=config.n_random_inits {
        let start = if init_index == 0 {
            AdmmState::zero(n, m)
        } else {
            AdmmState::random(n, m, &mut init_rng(config.seed, init_index))
        };
        match run_admm(start, demos, loss, reg, dynamics, config) {
            Ok(result) => {
                let s = &result.state;
                let residual = crate::riccati::kalman_residual(dynamics, &s.k, &s.p, &s.q, &s.r);
                runs.push(RunSummary {
                    init_index,
                    objective: Some(result.objective.as_f64()),
                    residual: Some(residual.as_f64()),
                    iterations: s.iter,
                    converged: result.converged,
                    failure: None,
                });
                let better = match &best {
                    Some((_, b)) => result.objective < b.objective,
                    None => true,
                };
                if better {
                    best = Some((init_index, result));
                }
            }
            Err(e) => runs.push(RunSummary {
                init_index,
                objective: None,
                residual: None,
                iterations: 0,
                converged: false,
                failure: Some(e.to_string()),
            }),
        }
    }

    let Some((init_index, result)) = best else {
        let messages = runs
            .iter()
            .map(|r| format!("start {}: {}", r.init_index, r.failure.as_deref().unwrap_or("")))
            .collect();
        return Err(Error::AllRunsDiverged(messages));
    };
    let RunResult {
        state,
        objective,
        converged,
    } = result;
    let (k_certified, certified_certificate) = certify(dynamics, &state.q, &state.r);
    let certificate = KalmanCertificate::new(dynamics, &state.k, state.p, state.q, state.r)?;
    Ok(KalmanFitReport {
        k: state.k,
        k_certified,
        certificate,
        certified_certificate,
        objective,
        converged,
        iterations: state.iter,
        init_index,
        runs,
    })
}

fn certify<T: Real>(
    dynamics: &LinearDynamics<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> (Option<Gain<T>>, Option<KalmanCertificate<T>>) {
    let Ok(cost) = CostMatrices::new(q.clone(), r.clone()) else {
        return (None, None);
    };
    let Ok(lqr) = solve_lqr(dynamics, &cost) else {
        return (None, None);
    };
    let cert = KalmanCertificate::new(dynamics, &lqr.k, lqr.p, q.clone(), r.clone()).ok();
    (Some(lqr.k), cert)
}
