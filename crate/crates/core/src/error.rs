use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model, dataset or config failed validation.
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// A validation failure that can be traced to a line of an input file.
    #[error("{path}:{line}: {detail}")]
    AtLine {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("observation has zero probability under the model (messages vanish at position {position})")]
    InfeasibleObservation { position: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("estimated correlation matrix is singular (smallest eigenvalue {min_eigenvalue:e}); use a nonzero shrinkage, e.g. --gamma 0.1")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("lasso coordinate descent did not converge after {sweeps} sweeps (last max coefficient change {max_change:e})")]
    NonConvergence { sweeps: usize, max_change: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Argument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad user input rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        if let Error::Csv(e) = self {
            // malformed rows are bad input, failed reads are not
            return !matches!(e.kind(), csv::ErrorKind::Io(_));
        }
        matches!(
            self,
            Error::Invalid { .. }
                | Error::AtLine { .. }
                | Error::SingularCovariance { .. }
                | Error::NotPsd { .. }
                | Error::RankDeficient { .. }
                | Error::InfeasibleObservation { .. }
                | Error::Shape(_)
                | Error::Argument(_)
        )
    }
}
