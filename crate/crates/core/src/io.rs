//! JSON exchange formats. Matrices are row-major nested arrays of numbers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::conic_ls::{LossSpec, RegularizerSpec};
use crate::error::{Error, Result};
use crate::fitting::FitReport;
use crate::kalman_fit::{KalmanFitReport, RunSummary};
use crate::linsys::{CostMatrices, DemoSet, Gain, LinearDynamics};
use crate::riccati::{KalmanCertificate, LqrSolution};
use crate::scalar::Real;

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows<T: Real>(m: &DMatrix<T>) -> Rows {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.as_f64()).collect())
        .collect()
}

/// Rejects ragged input. An empty list gives a `0×0` matrix.
pub fn rows_to_matrix<T: Real>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<T>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what} has rows of unequal length")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| T::lit(rows[i][j])))
}

fn vectors_to_rows<T: Real>(vs: &[DVector<T>]) -> Rows {
    vs.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsJson {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "W")]
    pub w: Rows,
}

impl DynamicsJson {
    pub fn from_dynamics<T: Real>(d: &LinearDynamics<T>) -> Self {
        Self {
            a: matrix_to_rows(d.a()),
            b: matrix_to_rows(d.b()),
            w: matrix_to_rows(d.w()),
        }
    }

    pub fn to_dynamics<T: Real>(&self) -> Result<LinearDynamics<T>> {
        LinearDynamics::new(
            rows_to_matrix(&self.a, "A")?,
            rows_to_matrix(&self.b, "B")?,
            rows_to_matrix(&self.w, "W")?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemosJson {
    pub states: Rows,
    pub inputs: Rows,
}

impl DemosJson {
    pub fn from_demos<T: Real>(d: &DemoSet<T>) -> Self {
        Self {
            states: vectors_to_rows(d.states()),
            inputs: vectors_to_rows(d.inputs()),
        }
    }

    pub fn to_demos<T: Real>(&self) -> Result<DemoSet<T>> {
        let to_vecs = |rows: &Rows| -> Vec<DVector<T>> {
            rows.iter()
                .map(|r| DVector::from_iterator(r.len(), r.iter().map(|&v| T::lit(v))))
                .collect()
        };
        if self.states.iter().chain(&self.inputs).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("demonstrations have non-finite entries".into()));
        }
        DemoSet::new(to_vecs(&self.states), to_vecs(&self.inputs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostJson {
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
}

impl CostJson {
    pub fn to_cost<T: Real>(&self) -> Result<CostMatrices<T>> {
        CostMatrices::new(rows_to_matrix(&self.q, "Q")?, rows_to_matrix(&self.r, "R")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainJson {
    #[serde(rename = "K")]
    pub k: Rows,
}

impl GainJson {
    pub fn to_gain<T: Real>(&self) -> Result<Gain<T>> {
        rows_to_matrix(&self.k, "K").map(Gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateJson {
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub residual: f64,
}

impl CertificateJson {
    pub fn from_certificate<T: Real>(c: &KalmanCertificate<T>) -> Self {
        Self {
            p: matrix_to_rows(&c.p),
            q: matrix_to_rows(&c.q),
            r: matrix_to_rows(&c.r),
            residual: c.residual.as_f64(),
        }
    }

    /// Rebuilds the certificate for `k`; the residual is recomputed, not trusted.
    pub fn to_certificate<T: Real>(
        &self,
        dynamics: &LinearDynamics<T>,
        k: &Gain<T>,
    ) -> Result<KalmanCertificate<T>> {
        KalmanCertificate::new(
            dynamics,
            k,
            rows_to_matrix(&self.p, "P")?,
            rows_to_matrix(&self.q, "Q")?,
            rows_to_matrix(&self.r, "R")?,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqrJson {
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "P")]
    pub p: Rows,
    pub residual: f64,
    pub iterations: usize,
}

impl LqrJson {
    pub fn from_solution<T: Real>(s: &LqrSolution<T>) -> Self {
        Self {
            k: matrix_to_rows(&s.k.0),
            p: matrix_to_rows(&s.p),
            residual: s.residual.as_f64(),
            iterations: s.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReportJson {
    #[serde(rename = "K")]
    pub k: Rows,
    pub objective: f64,
    pub loss: LossSpec,
    pub reg: RegularizerSpec,
}

impl FitReportJson {
    pub fn from_report<T: Real>(r: &FitReport<T>) -> Self {
        Self {
            k: matrix_to_rows(&r.k.0),
            objective: r.objective.as_f64(),
            loss: r.loss,
            reg: r.reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KalmanFitJson {
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "K_certified")]
    pub k_certified: Option<Rows>,
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub residual: f64,
    pub certified_residual: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub init_index: usize,
    pub runs: Vec<RunSummary>,
}

impl KalmanFitJson {
    pub fn from_report<T: Real>(r: &KalmanFitReport<T>) -> Self {
        Self {
            k: matrix_to_rows(&r.k.0),
            k_certified: r.k_certified.as_ref().map(|k| matrix_to_rows(&k.0)),
            p: matrix_to_rows(&r.certificate.p),
            q: matrix_to_rows(&r.certificate.q),
            r: matrix_to_rows(&r.certificate.r),
            residual: r.certificate.residual.as_f64(),
            certified_residual: r.certified_certificate.as_ref().map(|c| c.residual.as_f64()),
            objective: r.objective.as_f64(),
            iterations: r.iterations,
            converged: r.converged,
            init_index: r.init_index,
            runs: r.runs.clone(),
        }
    }
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics_round_trip() {
        let text = r#"{"A": [[1.0, 0.5], [0.0, 1.0]], "B": [[0.0], [1.0]], "W": [[1.0, 0.0], [0.0, 1.0]]}"#;
        let parsed: DynamicsJson = serde_json::from_str(text).unwrap();
        let d: LinearDynamics<f64> = parsed.to_dynamics().unwrap();
        assert_eq!(d.a()[(0, 1)], 0.5);
        assert_eq!(DynamicsJson::from_dynamics(&d), parsed);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(rows_to_matrix::<f64>(&rows, "A"), Err(Error::Dimension(_))));
    }

    #[test]
    fn demos_round_trip() {
        let text = r#"{"states": [[1.0, 2.0], [0.0, -1.0]], "inputs": [[0.5], [0.25]]}"#;
        let parsed: DemosJson = serde_json::from_str(text).unwrap();
        let demos: DemoSet<f64> = parsed.to_demos().unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(DemosJson::from_demos(&demos), parsed);
    }
}
