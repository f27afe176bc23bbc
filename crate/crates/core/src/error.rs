use thiserror::Error;

/// Errors raised by every gyrolab stage.
///
/// Variants split into configuration problems (exit code 2) and numerical
/// failures (exit code 3); see [`Error::exit_code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point ({0:.6e}, {1:.6e}) outside chart {2}")]
    Domain(f64, f64, &'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("mode: {0}")]
    Mode(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("near-critical level: {0}")]
    NearCritical(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("step size underflow at t = {t:.6e}: {detail}")]
    StepUnderflow { t: f64, detail: String },
    #[error("singular: {0}")]
    Singular(String),
    #[error("inconsistency: {0}")]
    Inconsistent(String),
    #[error("i/o: {0}")]
    Io(String),
    /// A failure inside a named pipeline stage.
    #[error("stage {stage}: {inner}")]
    Stage { stage: String, inner: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { inner, .. } => inner.exit_code(),
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Mode(_)
            | Error::Precondition(_)
            | Error::Io(_) => 2,
            _ => 3,
        }
    }

    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(..))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
