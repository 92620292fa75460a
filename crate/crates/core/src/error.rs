use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A covariance matrix could not be factorized even after jitter escalation.
    #[error("factorization failed for {kernel} (condition estimate {condition:.3e})")]
    Factorization { kernel: String, condition: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Input file does not match its schema; `location` is `line:column` or a column name.
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    /// A self-check or a replay comparison did not hold.
    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }

    /// Process exit code: 1 for problems with the user's inputs, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Factorization { .. } | Error::Fit(_) | Error::Sampler(_) | Error::Verification(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
