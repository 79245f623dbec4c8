use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown measure family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The centered second-moment matrix is rank deficient.
    #[error("hyperplane support: centered second-moment matrix has rank {rank} < {dim}")]
    HyperplaneSupport { rank: usize, dim: usize },

    #[error("sampling unsupported: {0}")]
    SamplingUnsupported(String),

    #[error("integration failure: {0}")]
    IntegrationFailure(String),

    #[error("no closed form: {0}")]
    NoClosedForm(String),

    #[error("solver stalled after {iterations} iterations (last residual {residual:e})")]
    SolverStalled { iterations: usize, residual: f64 },

    #[error("not centered: |mean| = {0:e}")]
    NotCentered(f64),

    #[error("not isotropic: max covariance deviation from identity {0:e}")]
    NotIsotropic(f64),

    #[error("not log-concave: {0}")]
    NotLogConcave(String),

    #[error("insufficient quadrature: standard error {std_error:e} exceeds tolerance {tol:e}")]
    InsufficientQuadrature { std_error: f64, tol: f64 },

    #[error("outside range: {0}")]
    OutsideRange(String),

    #[error("legendre divergence: {0}")]
    LegendreDivergence(String),

    #[error("singular hessian at {0}")]
    SingularHessian(String),

    #[error("problem too large for exact LP ({0} cost entries); use entropic")]
    UseEntropic(usize),

    #[error("transport order p must be >= 1, got {0}")]
    InvalidOrder(f64),

    #[error("no explicit constant for p = {0}; ratio-only mode")]
    NoExplicitConstant(f64),

    #[error("unsupported kernel source `{0}`")]
    UnsupportedKernel(String),

    #[error("kernel invariant violated ({invariant}) at y = {at}: {detail}")]
    KernelInvariant {
        invariant: &'static str,
        at: String,
        detail: String,
    },

    #[error("budget exceeded: {needed} > {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
