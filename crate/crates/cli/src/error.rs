use std::process::ExitCode;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Core(#[from] stargen::Error),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 for anything wrong with the input, 3 when a run blew up.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Numerical(_) | CliError::Core(stargen::Error::NumericalAbort { .. }) => ExitCode::from(3),
            _ => ExitCode::from(2),
        }
    }

    pub fn kind(&self) -> &'static str {
        use stargen::Error as E;
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical-abort",
            CliError::Core(e) => match e {
                E::Parse { .. } => "parse",
                E::NonTerminatingFlow { .. } => "non-terminating-flow",
                E::NumericalAbort { .. } => "numerical-abort",
                E::SpaceMismatch(..) | E::InvalidSpace(_) | E::UnknownCoordinate(_) | E::UnknownName(_) => "space",
                E::Unbound(_) => "unbound",
                E::Io(_) => "io",
                _ => "evaluation",
            },
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}
