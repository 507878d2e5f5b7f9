use thiserror::Error;

/// Errors shared across the planning, execution and benchmark layers.
#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid duration {0}: must be positive and finite")]
    InvalidDuration(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid space definition: {0}")]
    InvalidSpace(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("unknown tree node id {0}")]
    UnknownNode(u64),

    #[error("invalid start state: {0}")]
    InvalidStart(String),

    #[error("candidate plan set exhausted")]
    CandidatesExhausted,

    #[error("tree audit failed: {0}")]
    Audit(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("render error: {0}")]
    Render(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PlanningError>;
