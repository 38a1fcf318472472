//! Config-driven runs and the files they leave behind.

pub mod config;
pub mod format;
pub mod run;
pub mod summary;
pub mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::Estimate;

pub use config::{
    BandwagonConfig, ClusterConfig, InputPaths, InstrumentConfig, RunConfig, SimulateConfig,
    SpecConfig,
};
pub use run::{run, OutputTree, RunOutcome};
pub use summary::{balance, summary_stats, BalanceRow, SummaryRow};
pub use table::{emit_table, StarConvention, TableFormat, TableLayout};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("config: {0}")]
    Config(String),
    #[error("specification `{spec}`: {message}")]
    Spec { spec: String, message: String },
    #[error("table `{table}` references unknown specification `{spec}`")]
    UnknownSpec { table: String, spec: String },
    #[error("stage `{stage}` failed{}: {message}", spec.as_ref().map(|s| format!(" for specification `{s}`")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        spec: Option<String>,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReportError {
    pub(crate) fn from_csv(e: csv::Error) -> Self {
        ReportError::Io(std::io::Error::other(e.to_string()))
    }

    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        ReportError::Stage {
            stage,
            spec: None,
            message: e.to_string(),
        }
    }
}

/// One named specification's estimate, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub name: String,
    pub formula: String,
    pub config_sha256: String,
    pub estimate: Estimate,
}
