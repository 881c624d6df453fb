use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization problem is malformed: {0}")]
    Problem(String),

    #[error("LMI synthesis infeasible: {0}")]
    Infeasible(String),

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("artifact rejected: {0}")]
    Artifact(String),

    #[error("simulation diverged at t = {t:.3} s: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
