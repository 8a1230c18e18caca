use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("improper system: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },

    #[error("feedback loop is degenerate: 1 + L(s) is identically zero")]
    DegenerateFeedback,

    #[error("indeterminate DC gain (0/0)")]
    IndeterminateDcGain,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("solver configuration: {0}")]
    SolverConfig(String),

    #[error("simulation diverged at t = {0} s")]
    Diverged(f64),

    #[error("step response is degenerate: steady-state output is zero for a nonzero reference")]
    DegenerateResponse,

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("io: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Bad input, as opposed to a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Diverged(_) | Error::DegenerateResponse)
    }

    /// Offending field for parameter errors.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Error::InvalidParameter { field, .. } => Some(field),
            Error::SolverConfig(_) => Some("solver"),
            _ => None,
        }
    }

    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
