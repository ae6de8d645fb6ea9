use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph is disconnected: {} components {components:?}", components.len())]
    DisconnectedGraph { components: Vec<Vec<usize>> },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("Dykstra projection did not converge after {sweeps} sweeps (residual {residual:e}); intersection is likely empty")]
    NonConvergent { sweeps: usize, residual: f64 },

    #[error("variation sample set is empty")]
    EmptySample,

    #[error("initial point infeasible for agents {agents:?}")]
    InfeasibleStart { agents: Vec<usize> },

    #[error("oracle failure at round {round}, agent {agent}: {message}")]
    OracleFailure {
        round: usize,
        agent: usize,
        message: String,
    },

    #[error("tracking identity for {tracker} drifted at round {round}: relative error {error:e} exceeds {tol:e}")]
    TrackingDrift {
        round: usize,
        tracker: String,
        error: f64,
        tol: f64,
    },

    #[error("invariant violated at round {round}: {message}")]
    InvariantViolation { round: usize, message: String },

    #[error("invalid algorithm parameters: {0}")]
    InvalidParams(String),

    #[error("centralized solver did not converge at round {round} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        round: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("trace is missing oracle data at round {0}")]
    MissingOracle(usize),

    #[error("problem constants are required but missing")]
    MissingConstants,

    #[error("invalid constants: {0}")]
    InvalidConstants(String),

    #[error("monte carlo campaign failed: all {trials} trials errored (first: {first})")]
    AllTrialsFailed { trials: usize, first: String },

    #[error("comparison matrix is not Schur at delta {delta} (lambda {lambda})")]
    NotSchur { delta: f64, lambda: f64 },

    #[error("no delta in (0,1) makes the comparison matrix Schur (min lambda {min_lambda} at delta {at_delta})")]
    NoStableDelta { min_lambda: f64, at_delta: f64 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

impl Error {
    /// True for failures of a property the run is supposed to maintain, as
    /// opposed to bad input or I/O.
    pub fn is_invariant(&self) -> bool {
        matches!(
            self,
            Error::TrackingDrift { .. }
                | Error::InvariantViolation { .. }
                | Error::NoConvergence { .. }
                | Error::NonConvergent { .. }
                | Error::OracleFailure { .. }
        )
    }
}
