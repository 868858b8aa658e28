use std::fmt;

use sglanet::Error;

/// Process exit codes, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Verification = 1,
    Config = 2,
    Data = 3,
    Checkpoint = 4,
}

/// An error message tagged with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: ExitCode,
    pub message: String,
}

impl Failure {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Classifies a library error; variants without an inherent class use `fallback`.
pub fn classify(err: Error, fallback: ExitCode) -> Failure {
    let code = match &err {
        Error::Config(_) | Error::Argument(_) => ExitCode::Config,
        Error::Data(_) | Error::EmptyClass(_) | Error::Image { .. } => ExitCode::Data,
        Error::Checkpoint(_) | Error::CheckpointMismatch { .. } => ExitCode::Checkpoint,
        _ => fallback,
    };
    Failure::new(code, err.to_string())
}

pub trait Context<T> {
    /// Maps the error through [`classify`].
    fn or_exit(self, fallback: ExitCode) -> Result<T, Failure>;
}

impl<T> Context<T> for sglanet::Result<T> {
    fn or_exit(self, fallback: ExitCode) -> Result<T, Failure> {
        self.map_err(|e| classify(e, fallback))
    }
}
