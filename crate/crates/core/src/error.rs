use std::path::PathBuf;

use nalgebra::DVector;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {operand}: expected {expected}, got {actual}")]
    Dimension {
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "feedback taps {taps:?} are not primitive for a {register_length}-stage register: \
         measured period {measured}, expected {expected}"
    )]
    NonPrimitiveTaps {
        register_length: u32,
        taps: Vec<u32>,
        measured: u64,
        expected: u64,
    },

    #[error("PRBS seed must be a nonzero register state")]
    ZeroSeed,

    #[error("CSV error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("channel {channel} of the measured output is constant; fit is undefined")]
    ConstantChannel { channel: usize },

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:e})")]
    DareNotConverged { iterations: usize, residual: f64 },

    #[error("Riccati solution is not stabilizing: spectral radius of A - KC is {spectral_radius}")]
    DareNotStabilizing { spectral_radius: f64 },

    #[error("{name} must be symmetric positive {kind}")]
    NotPositive { name: &'static str, kind: &'static str },

    #[error("insufficient samples: {required} required, {available} available")]
    InsufficientSamples { required: usize, available: usize },

    #[error(
        "regressor is rank deficient (condition number {condition:e}); use a richer excitation signal"
    )]
    RankDeficient { condition: f64 },

    #[error("requested order {order} exceeds the numerical rank {rank} of the projected data")]
    OrderExceedsRank { order: usize, rank: usize },

    #[error("no candidate order produced a usable residual covariance")]
    NoValidOrder,

    #[error("quadratic program is infeasible")]
    QpInfeasible,

    #[error(
        "quadratic program hit the iteration cap ({iterations}): \
         primal residual {primal_residual:e}, stationarity residual {dual_residual:e}"
    )]
    QpMaxIterations {
        iterations: usize,
        best: DVector<f64>,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("plant state diverged at t = {time} s")]
    Divergence { time: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(operand: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            operand,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::ZeroSeed | Error::NonPrimitiveTaps { .. } => {
                ErrorKind::Config
            }
            Error::Io { .. } | Error::Csv { .. } => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }
}
