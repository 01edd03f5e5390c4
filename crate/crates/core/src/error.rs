//! Crate-wide error type and the exit-code mapping used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("blow-up: non-finite state at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },
    #[error(
        "implicit solve failed to converge after {iters} iterations \
         (contraction estimate {contraction:.3e})"
    )]
    NonConvergence { iters: usize, contraction: f64 },
    #[error("bound violation: {0}")]
    BoundViolation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 0 success, 2 config error, 3 blow-up,
    /// 4 implicit nonconvergence, 5 bound violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Io(_) => 2,
            Error::BlowUp { .. } => 3,
            Error::NonConvergence { .. } => 4,
            Error::BoundViolation(_) => 5,
        }
    }
}
