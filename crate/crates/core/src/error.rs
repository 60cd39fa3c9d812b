use thiserror::Error;

pub type Result<T> = std::result::Result<T, GphError>;

#[derive(Debug, Error)]
pub enum GphError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("order mismatch: {0}")]
    OrderMismatch(String),

    #[error("dense tensor needs {entries} complex entries ({required_bytes} bytes), cap is {cap} entries")]
    Capacity {
        entries: u128,
        required_bytes: u128,
        cap: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration failure at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("series diverges: component {component} has ratio {ratio} >= 1")]
    Divergence { component: usize, ratio: f64 },

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("input not bosonic-symmetric (residual {0:e})")]
    Asymmetric(f64),

    #[error("input not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("eigensolver: {0}")]
    Eigen(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("config validation error in `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GphError {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            GphError::ConfigParse(_) => 2,
            GphError::Validation { .. } => 3,
            GphError::Io(_) | GphError::Snapshot(_) => 1,
            _ => 4,
        }
    }
}
