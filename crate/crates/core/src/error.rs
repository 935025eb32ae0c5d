use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid medium: {0}")]
    InvalidMedium(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operation not supported by base norm `{norm}`: {op}")]
    Unsupported { norm: &'static str, op: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible volume {volume} (box volume {capacity})")]
    InfeasibleVolume { volume: f64, capacity: f64 },

    #[error("degenerate Wulff shape: {0}")]
    DegenerateWulff(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
