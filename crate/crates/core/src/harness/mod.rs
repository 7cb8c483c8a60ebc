//! Configuration, scenario orchestration, persistence and run comparison.

pub mod bundled;
pub mod config;
mod output;
mod report;
mod run;
pub mod synthetic;

pub use config::{
    Cadence, ControlConfig, ForgettingBasis, ControlMode, EstimationConfig, InfeasiblePolicy, MeasurementConfig,
    MetricsConfig, NetworkConfig, OutputConfig, ProfileConfig, PvConfig, ScenarioConfig, ScorePoints,
    SyntheticConfig,
};
pub use output::{sha256_file, sha256_hex, FileEntry, RunManifest};
pub use report::{compare_runs, Comparison, ComparisonRow, NodeScores, RunReport, SeedScores, VariantReport};
pub use run::{generate_dataset, run_scenario, simulate, RunOutcome, Scenario};
pub use synthetic::{synthetic_profiles, MppSeries};

use crate::grid::GridError;
use crate::measurement::MeasurementError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{stage} failed at t = {t} s: {message}")]
    Stage { stage: &'static str, t: u64, message: String },
    #[error("control step at t = {t} s is infeasible; most violated constraint '{row}'")]
    Infeasible { t: u64, row: String },
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 numerical failure, 4 infeasible
    /// control step.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => 2,
            Self::Stage { .. } => 3,
            Self::Infeasible { .. } => 4,
        }
    }
}

impl From<GridError> for HarnessError {
    fn from(e: GridError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<MeasurementError> for HarnessError {
    fn from(e: MeasurementError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
