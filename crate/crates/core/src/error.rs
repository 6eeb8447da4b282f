use thiserror::Error;

/// Errors raised by the environment, kernel, coarse-graining and
/// isoperimetry routines.
#[derive(Debug, Error)]
pub enum RcmError {
    #[error("invalid conductance law: {0}")]
    InvalidLaw(String),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("site {0:?} lies outside the box")]
    OutOfBox(Vec<i32>),
    #[error("isolated site {0:?}: no incident bond with positive conductance")]
    IsolatedSite(Vec<i32>),
    #[error("box radius {radius} too small for {steps} exact steps from {start:?}")]
    BoxTooSmall {
        radius: u32,
        steps: usize,
        start: Vec<i32>,
    },
    #[error("site {0:?} is not in the strong component")]
    NotStrong(Vec<i32>),
    #[error("sites {0:?} and {1:?} are disconnected")]
    Disconnected(Vec<i32>, Vec<i32>),
    #[error("stranded weak component at {0:?}: linear system is singular")]
    StrandedWeakComponent(Vec<i32>),
    #[error("iterative solve did not reach tolerance after {0} sweeps")]
    NoConvergence(usize),
    #[error("even-step return probability increased at n = {n}: {prev} -> {value}")]
    Monotonicity { n: usize, prev: f64, value: f64 },
    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-positive value {value} at n = {n} in fit range")]
    NonPositive { n: usize, value: f64 },
    #[error("rejection rate {rate:.4} exceeds the allowed maximum")]
    RejectionRate { rate: f64 },
    #[error("set is not contained in the chain's state space")]
    NotInStateSpace,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("memory cap exceeded: need {needed} bytes, cap {cap}")]
    MemoryCap { needed: usize, cap: usize },
    #[error("malformed field container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = RcmError> = std::result::Result<T, E>;
