use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration supplied by the caller.
    Usage,
    /// Input data is missing, malformed or inconsistent.
    Data,
    /// The data loaded fine but a model could not be estimated.
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("arrival date {0} precedes the first schedule regime")]
    DateBeforeSchedule(NaiveDate),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("no observations on the {side} side of the cutoff")]
    EmptySide { side: &'static str },

    #[error("design is not estimable (dropped columns: {dropped:?}): {reason}")]
    Estimability { dropped: Vec<String>, reason: String },

    #[error("singular covariance block for {0:?}; the coefficients are likely collinear")]
    SingularCovariance(Vec<String>),

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("{0}")]
    Unidentifiable(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) | Error::UnknownPreset(_) | Error::Schedule(_) => ErrorKind::Usage,
            Error::Schema(_)
            | Error::DateBeforeSchedule(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
            Error::EmptySide { .. }
            | Error::Estimability { .. }
            | Error::SingularCovariance(_)
            | Error::UnknownCoefficient(_)
            | Error::Unidentifiable(_) => ErrorKind::Estimation,
        }
    }
}
