use thiserror::Error;

/// Errors raised by the symbolic and numerical layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("phase space mismatch: [{0}] vs [{1}]")]
    SpaceMismatch(String, String),
    #[error("invalid phase space: {0}")]
    InvalidSpace(String),
    #[error("unknown coordinate `{0}`")]
    UnknownCoordinate(String),
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("coordinate `{0}` occurs in the expression but is not bound")]
    Unbound(String),
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("not invertible: {0}")]
    NotInvertible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("flow for `{coordinate}` did not terminate within {max_order} bracket iterations")]
    NonTerminatingFlow { coordinate: String, max_order: usize },
    #[error("round trip of coordinate map failed for `{0}`")]
    NotADiffeomorphism(String),
    #[error("classicality check failed for `{0}`: star powers pick up hbar corrections")]
    NotClassical(String),
    #[error("distributional calculus: {0}")]
    Distribution(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("numerical abort at t = {time}: {msg}")]
    NumericalAbort { time: f64, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
