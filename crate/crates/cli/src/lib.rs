//! Command-line front end for the `bilevel` estimator.

pub mod config;
pub mod io;
pub mod model_file;
pub mod record;
mod run;

pub use config::{parse_config, Command, RunConfig};
pub use record::{ResultRecord, RunStatus};
pub use run::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] bilevel::Error),
}

impl CliError {
    /// 2 for usage errors, 1 for everything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}
