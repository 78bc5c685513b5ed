//! Experiment orchestration behind the `reorient` binary: training runs,
//! consecutive-goal evaluation, holdout and architecture ablations, the
//! hidden-state probe, calibration and reports.

pub mod ablate;
pub mod calibrate;
pub mod config;
pub mod evaluate;
pub mod metrics;
pub mod probe;
pub mod report;
pub mod train;

/// Exit code 2 for configuration problems, 3 for everything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<reorient_core::Error> for CliError {
    fn from(e: reorient_core::Error) -> Self {
        match e {
            reorient_core::Error::Config(m) | reorient_core::Error::InvalidParams(m) => CliError::Config(m),
            e @ reorient_core::Error::Dimension { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<reorient_rapid::RapidError> for CliError {
    fn from(e: reorient_rapid::RapidError) -> Self {
        match e {
            reorient_rapid::RapidError::Core(c) => c.into(),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
