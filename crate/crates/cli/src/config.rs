//! Config-file parsing and the CLI error type.
//!
//! A config file is a JSON `RunConfig`. A manifest written by a previous run
//! is also accepted: its embedded `config` object is extracted, so any output
//! directory can be reproduced from its manifest alone.

use std::path::Path;

use thiserror::Error;

use ehsgd_core::training::{ConfigError, RunConfig, RunError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("failed to parse `{path}`: {reason}")]
    Parse { path: String, reason: String },
    #[error("{0}")]
    Validation(ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{failed} verifier check(s) ended in an unexpected state")]
    VerificationFailed { failed: usize },
}

impl From<RunError> for CliError {
    fn from(err: RunError) -> Self {
        match err {
            RunError::Config(e) => CliError::Validation(e),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(err: ConfigError) -> Self {
        CliError::Validation(err)
    }
}

/// Parse and validate a run config (or a manifest wrapping one).
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    // Manifests embed the config under a "config" key.
    let config_value = match value.get("config") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let config: RunConfig = serde_json::from_value(config_value).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Inclusive seed range in `A..B` form.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>, CliError> {
    let parts: Vec<&str> = text.split("..").collect();
    let usage = || {
        CliError::Usage(format!(
            "--seeds expects an inclusive range A..B, got `{text}`"
        ))
    };
    if parts.len() != 2 {
        return Err(usage());
    }
    let a: u64 = parts[0].parse().map_err(|_| usage())?;
    let b: u64 = parts[1].parse().map_err(|_| usage())?;
    if a > b {
        return Err(usage());
    }
    Ok((a..=b).collect())
}

/// Seed override from the environment (`EHSGD_SEED`), applied when no seed
/// range is given.
pub fn env_seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var("EHSGD_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("EHSGD_SEED must be a u64, got `{text}`"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("EHSGD_SEED: {e}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_are_inclusive() {
        assert_eq!(parse_seed_range("1..200").unwrap().len(), 200);
        assert_eq!(parse_seed_range("7..7").unwrap(), vec![7]);
        assert!(parse_seed_range("9..3").is_err());
        assert!(parse_seed_range("x..3").is_err());
        assert!(parse_seed_range("3").is_err());
    }
}
