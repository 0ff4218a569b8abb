use thiserror::Error;

/// Errors raised by grid construction, simulation, regression and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid family: {0}")]
    InvalidGrid(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported simulation mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("degenerate marginal on axis {axis}: {reason}")]
    DegenerateMarginal { axis: usize, reason: String },

    #[error("non-finite value at sample {sample}{}", time_point.map(|i| format!(", time point {i}")).unwrap_or_default())]
    NonFinite { sample: usize, time_point: Option<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("memory budget exceeded at level {level}: needs {needed} bytes, budget {budget} bytes")]
    MemoryBudget { level: usize, needed: u64, budget: u64 },

    #[error("oracle unavailable: {0}")]
    Oracle(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
