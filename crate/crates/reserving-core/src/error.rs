//! Shared error type for the reserving engine.

/// Errors produced by model fitting, estimators and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input file did not match the documented schema.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    /// An iterative fit did not reach the gradient tolerance.
    #[error("convergence failure in {context}: {iterations} iterations, gradient norm {grad_norm:.3e}")]
    ConvergenceFailure {
        context: String,
        iterations: usize,
        grad_norm: f64,
    },

    /// The design matrix is rank deficient and no ridge fallback was allowed.
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// The data cannot identify the model (e.g. all-zero counts).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// An estimator is undefined on the given inputs (e.g. zero development column).
    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),

    /// Cohort-level probabilities requested for cohorts without reported claims.
    #[error("undefined cohorts (no reported claims): {0:?}")]
    UndefinedCohorts(Vec<usize>),

    /// A distribution has no mass (e.g. weighted ECDF with zero total weight).
    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
