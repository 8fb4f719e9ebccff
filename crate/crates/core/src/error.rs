use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("factorization failed after jitter escalation (last jitter {last_jitter:.3e})")]
    FactorizationFailed { last_jitter: f64 },

    #[error("dual solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    DualNotConverged { residual: f64, iterations: usize },

    #[error("simulation diverged: {diverged} of {total} paths left the finite range")]
    SimulationDiverged { diverged: usize, total: usize },

    #[error("fit failed for control {control}: {source}")]
    ControlFit {
        control: usize,
        #[source]
        source: Box<CoreError>,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;
