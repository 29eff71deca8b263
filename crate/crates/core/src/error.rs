use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid case: {0}")]
    Invariant(String),

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error("scenario references nonexistent branch {0}")]
    UnknownBranch(usize),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("power flow did not converge after {iterations} iterations (max residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular power flow Jacobian")]
    SingularJacobian,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dynamics undefined: {0}")]
    Dynamics(String),

    #[error("LMI infeasible (best margin {margin:.3e})")]
    Infeasible { margin: f64 },

    #[error("LMI solver reached the iteration limit (margin {margin:.3e})")]
    MaxIterations { margin: f64 },

    #[error("clearing time {0} s is outside the Taylor validity range")]
    ClearingTime(f64),

    #[error("certificate/topology hash mismatch")]
    HashMismatch,

    #[error("singular KKT system")]
    SingularKkt,

    #[error("invalid option: {0}")]
    Option(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
