//! Scenario runner for the `diffalloc` command line tool.

pub mod export;
pub mod plot;
pub mod runner;
pub mod scenario;

use diffalloc_core::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const NON_CONVERGED: i32 = 3;
    pub const VIOLATION: i32 = 4;
    pub const NO_AUX_CHI: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("checks failed: {0}")]
    ChecksFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => exit::PARSE,
            CliError::Io(_) => exit::OTHER,
            CliError::ChecksFailed(_) => exit::VIOLATION,
            CliError::Core(e) => match e {
                Error::Config(_) => exit::PARSE,
                Error::NonConverged { .. } => exit::NON_CONVERGED,
                Error::Invariant(_)
                | Error::Violation { .. }
                | Error::SingularityViolation { .. }
                | Error::Pairing { .. } => exit::VIOLATION,
                Error::NoAuxChi => exit::NO_AUX_CHI,
                Error::Exhausted { .. } | Error::EmptyChi | Error::Domain(_) => exit::OTHER,
            },
        }
    }

    /// Short label printed before the message.
    pub fn label(&self) -> &'static str {
        match self.exit_code() {
            exit::PARSE => "PARSE_ERROR",
            exit::NON_CONVERGED => "NON_CONVERGED",
            exit::VIOLATION => "VIOLATION",
            exit::NO_AUX_CHI => "NO_AUX_CHI",
            _ => "ERROR",
        }
    }

    /// Extra explanation for errors users can fix in the scenario.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Core(Error::NoAuxChi) => Some(
                "a diffuse destination has no atoms to anchor the cells; without an \
                 auxiliary point process there is no translation-invariant way to pair \
                 source and destination mass. Set [chi] kind = \"poisson\" (or \"explicit\").",
            ),
            _ => None,
        }
    }
}
