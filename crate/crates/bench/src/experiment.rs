//! Experiment grid over `(seed, N)`: fit both methods on the same noisy expert
//! demonstrations and tabulate the closed-loop costs.

use std::path::{Path, PathBuf};

use kcfit::io::{read_json, DynamicsJson, Rows};
use kcfit::linalg::spectral_radius;
use kcfit::linsys::{noisy_policy_cost, StateSampling};
use kcfit::{
    closed_loop_cost, fit_kalman, generate_demos, policy_fit, solve_lqr, AdmmConfig, Cost,
    CostMatrices, DemoSet, Gain, LossSpec, LqrSolution, RegularizerSpec,
};
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::systems::{build_aircraft, build_small_random, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SmallRandom,
    Aircraft,
    Outliers,
    Custom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SmallRandom => "small_random",
            ExperimentKind::Aircraft => "aircraft",
            ExperimentKind::Outliers => "outliers",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Input-noise covariance: a multiple of the identity or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scale(f64),
    Matrix(Rows),
}

/// Unset optional fields take the experiment's defaults: `Σ = 4I` (`25I` for
/// the aircraft, `I` for custom), outlier probability 0.1 for the outliers
/// experiment and 0 otherwise, Huber loss with `M = 0.5` for outliers and the
/// quadratic loss otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(rename = "N_values", default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sigma: Option<SigmaSpec>,
    #[serde(default)]
    pub outlier_prob: Option<f64>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default = "default_reg")]
    pub reg: RegularizerSpec,
    #[serde(default)]
    pub admm: AdmmConfig,
    /// `{"A", "B", "W"}` JSON for the custom experiment; `Q = R = I`.
    #[serde(default)]
    pub dynamics_path: Option<PathBuf>,
    /// Report the certified gain for the Kalman method.
    #[serde(default)]
    pub certify: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub sampling: StateSampling,
}

fn default_n_values() -> Vec<usize> {
    vec![1, 2, 3, 4, 5, 7, 10, 15, 20]
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_reg() -> RegularizerSpec {
    RegularizerSpec::Ridge { weight: kcfit::fitting::DEFAULT_RIDGE }
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            n_values: default_n_values(),
            seeds: default_seeds(),
            sigma: None,
            outlier_prob: None,
            loss: None,
            reg: default_reg(),
            admm: AdmmConfig::default(),
            dynamics_path: None,
            certify: false,
            master_seed: 0,
            sampling: StateSampling::default(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let config: Self = read_json(path).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.n_values.is_empty() || self.seeds.is_empty() {
            return bad("N_values and seeds must be nonempty".into());
        }
        if self.n_values.contains(&0) {
            return bad("N_values must be positive".into());
        }
        if let Some(p) = self.outlier_prob {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("outlier_prob {p} outside [0, 1]"));
            }
        }
        if let Some(SigmaSpec::Scale(s)) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma scale must be nonnegative, got {s}"));
            }
        }
        if self.experiment == ExperimentKind::Custom && self.dynamics_path.is_none() {
            return bad("custom experiment needs dynamics_path".into());
        }
        self.loss().validate().map_err(config_error)?;
        self.reg.validate().map_err(config_error)?;
        self.admm.validate().map_err(config_error)?;
        Ok(())
    }

    pub fn loss(&self) -> LossSpec {
        self.loss.unwrap_or(match self.experiment {
            ExperimentKind::Outliers => LossSpec::Huber { m: 0.5 },
            _ => LossSpec::Quadratic,
        })
    }

    pub fn outlier_prob(&self) -> f64 {
        self.outlier_prob.unwrap_or(match self.experiment {
            ExperimentKind::Outliers => 0.1,
            _ => 0.0,
        })
    }

    /// The problem for one seed, with `Σ` overridden if configured.
    pub fn problem(&self, seed: u64) -> Result<Problem> {
        let mut problem = match self.experiment {
            ExperimentKind::SmallRandom | ExperimentKind::Outliers => build_small_random(seed),
            ExperimentKind::Aircraft => build_aircraft(),
            ExperimentKind::Custom => {
                let path = self.dynamics_path.as_ref().expect("validated");
                let json: DynamicsJson =
                    read_json(path).map_err(|e| HarnessError::Config(e.to_string()))?;
                let dynamics = json.to_dynamics().map_err(config_error)?;
                let (n, m) = (dynamics.n_states(), dynamics.n_inputs());
                Problem {
                    dynamics,
                    cost: CostMatrices::identity(n, m),
                    sigma: DMatrix::identity(m, m),
                }
            }
        };
        let m = problem.dynamics.n_inputs();
        match &self.sigma {
            Some(SigmaSpec::Scale(s)) => problem.sigma = DMatrix::identity(m, m) * *s,
            Some(SigmaSpec::Matrix(rows)) => {
                let sigma = kcfit::io::rows_to_matrix(rows, "sigma").map_err(config_error)?;
                if sigma.shape() != (m, m) {
                    return Err(HarnessError::Config(format!("sigma must be {m}×{m}")));
                }
                problem.sigma = sigma;
            }
            None => {}
        }
        Ok(problem)
    }
}

fn config_error(e: kcfit::Error) -> HarnessError {
    HarnessError::Config(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pf,
    Kalman,
    Expert,
    Optimal,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pf, Method::Kalman, Method::Expert, Method::Optimal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pf => "pf",
            Method::Kalman => "kalman",
            Method::Expert => "expert",
            Method::Optimal => "optimal",
        }
    }
}

/// One CSV line. A cell whose solver failed has infinite cost and NaN
/// spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    pub cost: Cost<f64>,
    pub spectral_radius: f64,
    pub kalman_residual: Option<f64>,
}

impl ResultRow {
    pub fn finite(&self) -> bool {
        self.cost.is_finite()
    }

    fn record(&self) -> [String; 8] {
        [
            self.experiment.name().to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            self.method.name().to_string(),
            self.cost.to_string(),
            self.finite().to_string(),
            self.spectral_radius.to_string(),
            self.kalman_residual.map(|r| r.to_string()).unwrap_or_default(),
        ]
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "experiment",
    "N",
    "seed",
    "method",
    "cost",
    "finite",
    "spectral_radius",
    "kalman_residual",
];

/// Everything a cell needs before fitting: the problem, the expert and the
/// demonstrations, plus the ADMM configuration seeded for this cell.
#[derive(Debug, Clone)]
pub struct CellInputs {
    pub problem: Problem,
    pub expert: LqrSolution<f64>,
    pub demos: DemoSet<f64>,
    pub admm: AdmmConfig,
}

/// Two independent seeds for `(master_seed, seed, N)`: demonstrations and
/// ADMM starts.
pub fn cell_seeds(master_seed: u64, seed: u64, n: usize) -> (u64, u64) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    key[16..24].copy_from_slice(&(n as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    (rng.next_u64(), rng.next_u64())
}

pub fn cell_inputs(config: &ExperimentConfig, seed: u64, n: usize) -> Result<CellInputs> {
    let problem = config.problem(seed)?;
    let expert = solve_lqr(&problem.dynamics, &problem.cost)?;
    let (demo_seed, admm_seed) = cell_seeds(config.master_seed, seed, n);
    let demos = generate_demos(
        &problem.dynamics,
        &expert.k,
        &problem.sigma,
        n,
        config.outlier_prob(),
        demo_seed,
        config.sampling,
    )?;
    let admm = AdmmConfig { seed: admm_seed, ..config.admm };
    Ok(CellInputs { problem, expert, demos, admm })
}

/// Rows for one cell plus the two fit objectives.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub seed: u64,
    pub n: usize,
    pub rows: Vec<ResultRow>,
    pub pf_objective: Option<f64>,
    pub kalman_objective: Option<f64>,
    pub errors: Vec<String>,
}

fn gain_row(
    config: &ExperimentConfig,
    problem: &Problem,
    seed: u64,
    n: usize,
    method: Method,
    gain: &Gain<f64>,
    cost: Cost<f64>,
    kalman_residual: Option<f64>,
) -> Result<ResultRow> {
    let rho = spectral_radius(&problem.dynamics.closed_loop(gain)?)?;
    Ok(ResultRow {
        experiment: config.experiment,
        n,
        seed,
        method,
        cost,
        spectral_radius: rho,
        kalman_residual,
    })
}

fn failed_row(config: &ExperimentConfig, seed: u64, n: usize, method: Method) -> ResultRow {
    ResultRow {
        experiment: config.experiment,
        n,
        seed,
        method,
        cost: Cost::Infinite,
        spectral_radius: f64::NAN,
        kalman_residual: None,
    }
}

/// Runs one cell. Solver failures end up in `errors` and as failed rows;
/// only configuration problems are returned as errors.
pub fn run_cell(config: &ExperimentConfig, seed: u64, n: usize) -> Result<CellResult> {
    let mut result = CellResult {
        seed,
        n,
        rows: Vec::with_capacity(4),
        pf_objective: None,
        kalman_objective: None,
        errors: Vec::new(),
    };
    let inputs = match cell_inputs(config, seed, n) {
        Ok(inputs) => inputs,
        Err(HarnessError::Solver(e)) => {
            result.errors.push(format!("setup: {e}"));
            result.rows = Method::ALL.iter().map(|&m| failed_row(config, seed, n, m)).collect();
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let CellInputs { problem, expert, demos, admm } = &inputs;
    let loss = config.loss();
    let dyn_ = &problem.dynamics;
    let cost = &problem.cost;

    let pf_row = policy_fit(demos, &loss, &config.reg).and_then(|fit| {
        result.pf_objective = Some(fit.objective);
        let c = closed_loop_cost(dyn_, cost, &fit.k)?;
        gain_row(config, problem, seed, n, Method::Pf, &fit.k, c, None).map_err(to_core)
    });
    let kalman_row = fit_kalman(demos, &loss, &config.reg, dyn_, admm).and_then(|report| {
        result.kalman_objective = Some(report.objective);
        let (gain, residual) = match (&report.k_certified, &report.certified_certificate) {
            (Some(k), Some(c)) if config.certify => (k, c.residual),
            _ => (&report.k, report.certificate.residual),
        };
        let c = closed_loop_cost(dyn_, cost, gain)?;
        gain_row(config, problem, seed, n, Method::Kalman, gain, c, Some(residual)).map_err(to_core)
    });
    let expert_row = noisy_policy_cost(dyn_, cost, &expert.k, &problem.sigma).and_then(|c| {
        gain_row(config, problem, seed, n, Method::Expert, &expert.k, c, None).map_err(to_core)
    });
    let optimal_row = closed_loop_cost(dyn_, cost, &expert.k).and_then(|c| {
        gain_row(config, problem, seed, n, Method::Optimal, &expert.k, c, None).map_err(to_core)
    });

    for (method, row) in Method::ALL.into_iter().zip([pf_row, kalman_row, expert_row, optimal_row]) {
        match row {
            Ok(row) => result.rows.push(row),
            Err(e) => {
                result.errors.push(format!("{}: {e}", method.name()));
                result.rows.push(failed_row(config, seed, n, method));
            }
        }
    }
    Ok(result)
}

fn to_core(e: HarnessError) -> kcfit::Error {
    match e {
        HarnessError::Solver(e) => e,
        other => kcfit::Error::Validation(other.to_string()),
    }
}

/// Per-method statistic in the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerMethod<V> {
    pub pf: V,
    pub kalman: V,
    pub expert: V,
    pub optimal: V,
}

impl<V> PerMethod<V> {
    fn from_fn(mut f: impl FnMut(Method) -> V) -> Self {
        Self {
            pf: f(Method::Pf),
            kalman: f(Method::Kalman),
            expert: f(Method::Expert),
            optimal: f(Method::Optimal),
        }
    }

    pub fn get(&self, method: Method) -> &V {
        match method {
            Method::Pf => &self.pf,
            Method::Kalman => &self.kalman,
            Method::Expert => &self.expert,
            Method::Optimal => &self.optimal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    #[serde(rename = "N")]
    pub n: usize,
    /// Mean over finite costs; `null` if none is finite.
    pub mean_cost: PerMethod<Option<f64>>,
    pub fraction_finite: PerMethod<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: ExperimentKind,
    #[serde(rename = "per_N")]
    pub per_n: Vec<SummaryEntry>,
}

pub fn summarize(experiment: ExperimentKind, n_values: &[usize], rows: &[ResultRow]) -> Summary {
    let per_n = n_values
        .iter()
        .map(|&n| {
            let select = |m: Method| rows.iter().filter(move |r| r.n == n && r.method == m);
            SummaryEntry {
                n,
                mean_cost: PerMethod::from_fn(|m| {
                    let finite: Vec<f64> = select(m).filter_map(|r| r.cost.finite()).collect();
                    (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64)
                }),
                fraction_finite: PerMethod::from_fn(|m| {
                    let total = select(m).count();
                    let finite = select(m).filter(|r| r.finite()).count();
                    if total == 0 { 0.0 } else { finite as f64 / total as f64 }
                }),
            }
        })
        .collect();
    Summary { experiment, per_n }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub cells: Vec<CellResult>,
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

impl ExperimentOutput {
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER)?;
        for row in &self.rows {
            writer.write_record(row.record())?;
        }
        writer
            .into_inner()
            .map_err(|e| HarnessError::Io(e.into_error()))
    }

    pub fn summary_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        Ok(text)
    }

    /// Writes `<dir>/<experiment>.csv` and `<dir>/<experiment>_summary.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let name = self.summary.experiment.name();
        let csv_path = dir.join(format!("{name}.csv"));
        let json_path = dir.join(format!("{name}_summary.json"));
        std::fs::write(&csv_path, self.csv_bytes()?)?;
        std::fs::write(&json_path, self.summary_json()?)?;
        Ok((csv_path, json_path))
    }
}

/// Runs every `(seed, N)` cell in order: seeds outer, `N` inner.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.seeds.len() * config.n_values.len());
    for &seed in &config.seeds {
        for &n in &config.n_values {
            cells.push(run_cell(config, seed, n)?);
        }
    }
    let rows: Vec<ResultRow> = cells.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    let summary = summarize(config.experiment, &config.n_values, &rows);
    Ok(ExperimentOutput { cells, rows, summary })
}
