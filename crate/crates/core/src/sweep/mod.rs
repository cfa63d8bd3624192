//! Experiment machinery: presets, cross-validated trials, replicated
//! one-factor-at-a-time sweeps, window grid searches, the ablation ladder and
//! report emission.

mod presets;
mod report;
mod runner;
mod spec;
mod trial;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

pub use presets::{
    ablation_rung, preset_baseline, preset_proposed, preset_variant, ABLATION_DELTAS, ABLATION_RUNGS,
};
pub use report::{
    emit_report, emit_timings, load_report, parse_report, report_csv, report_json, timings_json, verify_report,
    ReportFormat, AGGREGATE_TOLERANCE, CSV_HEADER,
};
pub use runner::{
    ablation_ladder, grid_search_windows, ofat_sweep, run_sweep, Delta, ReportMetadata, ReportRow, SweepReport,
    WindowLayer,
};
pub use spec::{value_label, Axis, SweepSpec};
pub use trial::{
    derive_seed, mean_std, pct_change, replicate, replication_plan, run_replication, run_trial, Aggregate, Dataset,
    TrialFailure, TrialResult,
};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("{axis} value {value} rejected: {reason}")]
    InvalidValue {
        axis: &'static str,
        value: String,
        reason: String,
    },
    #[error("percent change needs a positive baseline, got {0}")]
    NonPositiveBaseline(f64),
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SweepError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        SweepError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
