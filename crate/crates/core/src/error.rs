use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("singular weight: lambda_{index} = 0 with nonzero coordinate {value}")]
    SingularWeight { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("time {t} outside [{lower}, {upper}]")]
    TimeOutOfRange { t: f64, lower: f64, upper: f64 },

    #[error("domain too small: boundary mass {mass:e} exceeds {limit:e} at t = {t}")]
    DomainTooSmall { mass: f64, limit: f64, t: f64 },

    #[error("step size error: Courant number {courant} exceeds {limit}")]
    StepSize { courant: f64, limit: f64 },

    #[error("divergence in path {path} at step {step}: |y| = {norm:e}")]
    Divergence { path: usize, step: usize, norm: f64 },

    #[error("time {0} is not a node of the time grid")]
    OffGrid(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("not a solution candidate: {0}")]
    NotASolution(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Picard iterate {iterate}: {source}")]
    Picard {
        iterate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("container format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
