//! Experiment runner behind the `qobs` binary: config files, the
//! `min-levels`, `certify`, `simulate` and `batch` commands, and their CSV,
//! JSON and SVG outputs.

pub mod commands;
pub mod config;
pub mod plot;
pub mod table;

use std::path::{Path, PathBuf};

pub use commands::{batch, certify, min_levels, simulate};
pub use config::ExperimentConfig;
pub use table::{Format, Table};

pub const EXIT_OVERFLOW: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] qobs::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("infeasible design: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use qobs::Error as E;
        match self {
            CliError::Core(E::Overflow { .. } | E::Saturation { .. }) => EXIT_OVERFLOW,
            CliError::Core(
                E::InfeasibleRate { .. }
                | E::Infeasible(_)
                | E::Precondition(_)
                | E::Unobservable
                | E::Conditioning(_)
                | E::Rank(_)
                | E::Solver(_),
            )
            | CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Core(E::Dimension(_) | E::Argument(_) | E::Lookup(_) | E::Parse(_))
            | CliError::Config(_)
            | CliError::Io { .. } => EXIT_CONFIG,
        }
    }
}
