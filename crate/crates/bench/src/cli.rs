//! Input formats and handlers for the `kcfit` subcommands. Every handler
//! returns the JSON document to print.

use std::path::Path;

use kcfit::io::{
    matrix_to_rows, read_json, rows_to_matrix, CertificateJson, DemosJson, FitReportJson,
    KalmanFitJson, LqrJson, Rows,
};
use kcfit::{
    check_kalman_feasible, fit_kalman, policy_fit, solve_lqr, AdmmConfig, CostMatrices, Gain,
    LinearDynamics, LossSpec, RegularizerSpec,
};
use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// `A` and `B` are required; `W` defaults to zero, `Q` and `R` to identities.
#[derive(Debug, Clone, Deserialize)]
pub struct ProblemInput {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "W", default)]
    pub w: Option<Rows>,
    #[serde(rename = "Q", default)]
    pub q: Option<Rows>,
    #[serde(rename = "R", default)]
    pub r: Option<Rows>,
}

impl ProblemInput {
    pub fn dynamics(&self) -> Result<LinearDynamics<f64>> {
        let a: DMatrix<f64> = rows_to_matrix(&self.a, "A")?;
        let n = a.nrows();
        let w = match &self.w {
            Some(w) => rows_to_matrix(w, "W")?,
            None => DMatrix::zeros(n, n),
        };
        Ok(LinearDynamics::new(a, rows_to_matrix(&self.b, "B")?, w)?)
    }

    pub fn cost(&self, n: usize, m: usize) -> Result<CostMatrices<f64>> {
        let q = match &self.q {
            Some(q) => rows_to_matrix(q, "Q")?,
            None => DMatrix::identity(n, n),
        };
        let r = match &self.r {
            Some(r) => rows_to_matrix(r, "R")?,
            None => DMatrix::identity(m, m),
        };
        Ok(CostMatrices::new(q, r)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FitInput {
    #[serde(flatten)]
    pub demos: DemosJson,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub reg: Option<RegularizerSpec>,
}

impl FitInput {
    fn loss(&self) -> LossSpec {
        self.loss.unwrap_or(LossSpec::Quadratic)
    }

    fn reg(&self) -> RegularizerSpec {
        self.reg.unwrap_or(RegularizerSpec::Ridge { weight: kcfit::fitting::DEFAULT_RIDGE })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FitKalmanInput {
    #[serde(flatten)]
    pub problem: ProblemInput,
    #[serde(flatten)]
    pub fit: FitInput,
    #[serde(default)]
    pub admm: AdmmConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CheckInput {
    #[serde(flatten)]
    pub problem: ProblemInput,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_check_iters")]
    pub max_iter: usize,
}

fn default_check_iters() -> usize {
    20_000
}

/// Command-line overrides of the ADMM parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdmmOverrides {
    pub rho: Option<f64>,
    pub iters: Option<usize>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
}

impl AdmmOverrides {
    pub fn apply(&self, config: &mut AdmmConfig) {
        if let Some(rho) = self.rho {
            config.rho = rho;
        }
        if let Some(iters) = self.iters {
            config.n_iter = iters;
        }
        if let Some(eps) = self.eps {
            config.eps = eps;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
    }
}

pub fn read_input<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    read_json(path).map_err(|e| HarnessError::Config(e.to_string()))
}

fn to_value<S: Serialize>(value: &S) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(value)?)
}

pub fn lqr(input: &ProblemInput) -> Result<serde_json::Value> {
    let dynamics = input.dynamics()?;
    let cost = input.cost(dynamics.n_states(), dynamics.n_inputs())?;
    let solution = solve_lqr(&dynamics, &cost)?;
    to_value(&LqrJson::from_solution(&solution))
}

pub fn fit(input: &FitInput) -> Result<serde_json::Value> {
    let demos = input.demos.to_demos::<f64>()?;
    let report = policy_fit(&demos, &input.loss(), &input.reg())?;
    to_value(&FitReportJson::from_report(&report))
}

#[derive(Serialize)]
struct FitKalmanOutput {
    /// The gain to deploy: `K_certified` with `--certify`, else `K`.
    policy: Rows,
    #[serde(flatten)]
    report: KalmanFitJson,
}

pub fn fit_kalman_cmd(
    input: &FitKalmanInput,
    overrides: AdmmOverrides,
    certify: bool,
) -> Result<serde_json::Value> {
    let dynamics = input.problem.dynamics()?;
    let demos = input.fit.demos.to_demos::<f64>()?;
    let mut admm = input.admm;
    overrides.apply(&mut admm);
    admm.validate()?;
    let report = fit_kalman(&demos, &input.fit.loss(), &input.fit.reg(), &dynamics, &admm)?;
    to_value(&FitKalmanOutput {
        policy: matrix_to_rows(report.preferred_gain(certify).matrix()),
        report: KalmanFitJson::from_report(&report),
    })
}

#[derive(Serialize)]
struct CheckOutput {
    feasible: bool,
    tolerance: f64,
    iterations: usize,
    #[serde(flatten)]
    certificate: CertificateJson,
}

pub fn check_kalman(input: &CheckInput) -> Result<serde_json::Value> {
    let dynamics = input.problem.dynamics()?;
    let k = Gain(rows_to_matrix(&input.k, "K")?);
    if let Some(tol) = input.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(HarnessError::Config(format!("tol must be positive, got {tol}")));
        }
    }
    let check = check_kalman_feasible(&dynamics, &k, input.tol, input.max_iter)?;
    to_value(&CheckOutput {
        feasible: check.feasible,
        tolerance: check.tolerance,
        iterations: check.iterations,
        certificate: CertificateJson::from_certificate(&check.certificate),
    })
}
