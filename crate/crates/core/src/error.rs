use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate entry for {0}")]
    Conflict(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete panel: {0}")]
    Completeness(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("insufficient coverage: {0}")]
    Coverage(String),

    #[error("design matrix is rank deficient; dependent columns: {}", columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("not enough residual degrees of freedom: n = {n}, p = {p}")]
    DegreesOfFreedom { n: usize, p: usize },

    #[error("covariance is not positive semidefinite: {0}")]
    Covariance(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("misaligned periods: {0}")]
    Alignment(String),

    #[error("model did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Fit,
    Internal,
}

impl Error {
    pub fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::Conflict(_)
            | Error::Domain(_)
            | Error::Completeness(_)
            | Error::Range(_)
            | Error::Coverage(_)
            | Error::Alignment(_)
            | Error::Usage(_)
            | Error::Parameter(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Input,
            Error::SingularDesign { .. }
            | Error::DegenerateResponse(_)
            | Error::DegreesOfFreedom { .. }
            | Error::NonConvergence { .. }
            | Error::Covariance(_)
            | Error::Overflow(_) => ErrorKind::Fit,
            Error::Json(_) => ErrorKind::Internal,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Input => 2,
            ErrorKind::Fit => 3,
            ErrorKind::Internal => 4,
        }
    }
}
