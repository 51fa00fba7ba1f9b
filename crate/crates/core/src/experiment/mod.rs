//! Experiment bundles and the commands built on them.
//!
//! An experiment is one JSON document naming a cluster, a model, a workload
//! (each inline or as a path relative to the document), a strategy, the
//! time model and the migration settings. The commands mirror the CLI:
//! [`cmd_place`], [`cmd_simulate`], [`cmd_sweep`] and [`cmd_validate`].

mod commands;
mod config;
mod format;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{
    cmd_place, cmd_simulate, cmd_sweep, cmd_validate, run_metrics, write_metrics, Axis, FileCheck,
    PlaceOutput, RunOutput, SweepRow,
};
pub use config::{parse_cluster, parse_model, parse_trace, parse_workload, read_trace, ExperimentConfig, Seeds};
pub use format::{round6, round_json, sig6, to_json_line, to_json_pretty};

use crate::placement::PlacementError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{context}: {message}")]
    Config { context: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl ExperimentError {
    /// 1 for usage and config problems, 2 when capacity cannot satisfy the
    /// constraints, 3 for internal invariant breaches.
    pub fn exit_code(&self) -> i32 {
        fn placement(e: &PlacementError) -> i32 {
            match e {
                PlacementError::Infeasible { .. } | PlacementError::Pack(_) => 2,
                PlacementError::OracleTooLarge(_) => 1,
                PlacementError::Internal(_) => 3,
            }
        }
        match self {
            ExperimentError::Usage(_)
            | ExperimentError::Config { .. }
            | ExperimentError::Io { .. }
            | ExperimentError::Trace { .. } => 1,
            ExperimentError::Placement(e) => placement(e),
            ExperimentError::Sim(e) => match e {
                SimError::Placement(p) => placement(p),
                SimError::Unplaced { .. } | SimError::InvalidPlacement | SimError::Internal(_) => 3,
                _ => 1,
            },
            ExperimentError::Internal(_) => 3,
        }
    }
}
