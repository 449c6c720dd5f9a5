//! Experiment plumbing: scenario files, runs, learning curves, model packages,
//! figure presets, and the registry command set.

mod config;
mod curves;
mod figures;
mod package;
mod registry_cli;
mod scenario;

pub use config::{parse_scenario, parse_scenario_str, parse_shorthand, Baseline, ExpertSpec, ScenarioConfig};
pub use curves::{
    aggregate, mann_whitney_less, median, read_curve, sort_rows, steps_to_threshold, variance, write_rows, CurveRow,
    CurveSink, MedianRow, CURVE_HEADER,
};
pub use figures::{replicate_figure, FigureOptions, FigureOutcome, PRESETS};
pub use package::{ModelPackage, PackageMetadata, PACKAGE_MAGIC, PACKAGE_VERSION};
pub use registry_cli::{registry_command, RegistryCommand};
pub use scenario::{
    env_details, env_label, load_experts, pretrain_expert, run_scenario, CollectSummary, ScenarioOutcome, SeedOutcome,
};

use crate::envs::EnvError;
use crate::medc::MedcError;
use crate::registry::RegistryError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("model package: {0}")]
    Package(String),
    #[error("expert: {0}")]
    Expert(String),
    #[error("unknown preset {0:?} (available: fig5, fig7, fig8-frl, fig8-il, fleet, maze)")]
    UnknownPreset(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Medc(#[from] MedcError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl HarnessError {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::UnknownPreset(_) => 2,
            Self::Package(_) | Self::Expert(_) => 3,
            Self::Registry(e) => match e {
                RegistryError::DuplicateUser(..) | RegistryError::DuplicateModel(..) => 10,
                RegistryError::UnknownUser(..)
                | RegistryError::UnknownCid(..)
                | RegistryError::UnknownApplication(..) => 11,
                RegistryError::InsufficientBalance { .. } => 12,
                RegistryError::CorruptLedger(..)
                | RegistryError::ReplayMismatch(..)
                | RegistryError::ContentMismatch(..) => 13,
                _ => 14,
            },
            Self::Io(_) | Self::Csv(_) | Self::Json(_) => 4,
            Self::Train(_) | Self::Medc(_) | Self::Env(_) => 5,
        }
    }
}
