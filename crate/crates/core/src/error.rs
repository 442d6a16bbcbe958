use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("network is not strongly connected")]
    Reducible,

    #[error("stationary iteration did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergent { residual: f64, iterations: usize },

    #[error("eigen-solver residual {residual:.3e} exceeds tolerance")]
    NumericalFailure { residual: f64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid signal model: {0}")]
    InvalidModel(String),

    #[error("agent {agent} has no signal {signal}")]
    UnknownSignal { agent: usize, signal: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("true state is not identifiable (I(theta_1, theta_2) = {0})")]
    NotIdentifiable(f64),

    #[error("network generation failed: {0}")]
    GenerationFailed(String),

    #[error("{0} has no closed-form spectrum")]
    Unsupported(String),

    #[error("spectrum has a complex eigenvalue (imaginary part {0:.3e})")]
    ComplexSpectrum(f64),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("no edge between agents {0} and {1}")]
    NoSuchEdge(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
