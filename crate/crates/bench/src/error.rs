use thiserror::Error;

/// Harness errors, split by exit code: configuration (1) or solver (2).
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(#[from] kcfit::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Solver(e) if !is_input_error(e) => 2,
            _ => 1,
        }
    }
}

fn is_input_error(e: &kcfit::Error) -> bool {
    matches!(
        e,
        kcfit::Error::Dimension(_)
            | kcfit::Error::Validation(_)
            | kcfit::Error::Json(_)
            | kcfit::Error::Io(_)
    )
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
