use thiserror::Error;

/// Errors raised by the estimators and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    /// A covariance that must be positive definite is not.
    #[error("matrix is not positive definite ({context}); smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPositiveDefinite { context: String, min_eigenvalue: f64 },

    /// The majorize-minimize covariance step could not restore positive definiteness.
    #[error("covariance step failed after {halvings} step halvings; smallest eigenvalue {min_eigenvalue:.3e}")]
    StepFailure { halvings: usize, min_eigenvalue: f64 },

    #[error("search failed: {0}")]
    SearchFailure(String),

    /// Wraps a failure inside an iterative solver with the iteration it occurred at.
    #[error("{stage} {iteration}: {source}")]
    Iteration {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, stage: &'static str, iteration: usize) -> Error {
        Error::Iteration {
            stage,
            iteration,
            source: Box::new(self),
        }
    }

    /// True when the failure is numerical (singular systems, lost definiteness, failed
    /// searches) rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular(_)
            | Error::NotPositiveDefinite { .. }
            | Error::StepFailure { .. }
            | Error::SearchFailure(_) => true,
            Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
