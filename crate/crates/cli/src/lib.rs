//! Library behind the `ehsgd` binary: config parsing, experiment
//! orchestration, output serialization, the built-in experiment preset, and
//! the verifier suites.

pub mod config;
pub mod output;
pub mod preset;
pub mod runner;
pub mod verify;

pub use config::{parse_config, CliError};

/// Process exit codes: 0 success, 1 runtime failure, 2 usage/config error.
pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Usage(_) | CliError::Parse { .. } | CliError::Validation(_) => 2,
        CliError::Runtime(_) | CliError::Io(_) | CliError::VerificationFailed { .. } => 1,
    }
}
