use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum FracError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible data: {0}")]
    Infeasible(String),

    #[error("incompatible discretizations: {0}")]
    Incompatible(String),

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<FracError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FracError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FracError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
