//! Command-line front end: run, report, bench and inspect.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input (configuration,
//! paths or arguments), 3 training divergence.

pub mod bench;
pub mod config;
pub mod report;
pub mod run;

use std::path::Path;

use aap_core::checkpoint::{Checkpoint, Header};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn config(e: config::ConfigError) -> Self {
        Self::usage(format!("invalid config: {e}"))
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn diverged(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DIVERGED,
            message: message.into(),
        }
    }

    pub fn core(e: aap_core::Error) -> Self {
        match e {
            aap_core::Error::NotFound(_) => Self::usage(e.to_string()),
            aap_core::Error::Diverged { .. } => Self::diverged(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::usage(format!("{}: {e}", path.display()))
        } else {
            Self::runtime(format!("{}: {e}", path.display()))
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, serde::Serialize)]
pub struct Inspection {
    pub id: String,
    pub header: Header,
}

/// Header and content id of a checkpoint file.
pub fn cmd_inspect(path: &Path) -> Result<Inspection, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (header, _) = Checkpoint::decode_header(&bytes).map_err(CliError::core)?;
    Checkpoint::decode(&bytes).map_err(CliError::core)?;
    Ok(Inspection {
        id: aap_core::checkpoint::content_id(&bytes),
        header,
    })
}
