//! File formats: tick and resolution CSVs, TOML run configuration, report
//! emission, and the static taxonomy tables.

mod config;
mod ingest;
mod report;
mod taxonomy;

pub use config::{
    load_batch_manifest, load_risk_file, load_run_config, load_spec_file, BatchManifest, ManifestRun,
    RiskFile, RunConfig, SpecFile,
};
pub use ingest::{
    load_data_dir, load_leg_series, load_negrisk, load_resolutions, write_data_dir, NEGRISK_FILE,
    RESOLUTIONS_FILE,
};
pub use report::{emit_batch_summary, emit_report, parse_report, write_index_csv, ReportFormat};
pub use taxonomy::{
    evaluability_rows, inheritance_rows, print_taxonomy, EvaluabilityRow, InheritanceRow, Mark, TableCell,
    TaxonomyTable, VARIANT_COLUMNS,
};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema mismatch at row {row}, column `{column}`")]
    SchemaMismatch {
        path: PathBuf,
        /// 1-based data row; 0 is the header.
        row: usize,
        column: String,
    },
    #[error("{path}: row {row}: probability {value} outside [0, 1]")]
    BoundViolation { path: PathBuf, row: usize, value: f64 },
    #[error("{path}: leg `{leg}` appears more than once")]
    DuplicateLeg { path: PathBuf, leg: String },
    #[error("{path}: row {row}: outcome `{value}` is not 0 or 1")]
    OutcomeNotBinary {
        path: PathBuf,
        row: usize,
        value: String,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: malformed report: {message}")]
    Report { path: PathBuf, message: String },
}

impl IoError {
    /// Whether the error comes from the file system rather than the content.
    pub fn is_io_failure(&self) -> bool {
        matches!(self, IoError::IoFailure { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::IoFailure {
            path: path.into(),
            source,
        }
    }
}
