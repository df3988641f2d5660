use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("closed loop is not stable (spectral radius {spectral_radius:.6e})")]
    Unstable { spectral_radius: f64 },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("normal equations are singular and inconsistent")]
    SingularNormalEquations,

    #[error("ADMM iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all {} ADMM runs diverged: {}", .0.len(), .0.join("; "))]
    AllRunsDiverged(Vec<String>),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
