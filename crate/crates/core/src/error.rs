use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter coordinate {0} is not finite")]
    NonFiniteParam(usize),

    #[error("proposal covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("invalid chain state: current and proposed log posteriors are both -inf")]
    InvalidChainState,

    #[error("likelihood estimate at the initial point is zero (log = -inf)")]
    ZeroInitialEstimate,

    #[error("conditional mode did not converge after {0} iterations")]
    ModeNotConverged(usize),

    #[error("epoch buffer already holds {0} values; observe called past the epoch boundary")]
    EpochOverflow(usize),

    #[error("epoch contains a -inf recycled log-likelihood")]
    InvalidEpoch,

    #[error("estimator returned a -inf log-likelihood at the evaluation point")]
    DegenerateEstimator,

    #[error("series has zero sample variance")]
    ZeroVariance,

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error(
        "search interval [{lo}, {hi}] does not bracket the target {target}: \
         sigma({lo}) = {sigma_lo:.4}, sigma({hi}) = {sigma_hi:.4}; widen the interval"
    )]
    Bracketing {
        lo: usize,
        hi: usize,
        sigma_lo: f64,
        sigma_hi: f64,
        target: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
