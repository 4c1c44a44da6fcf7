//! Experiment definitions and orchestration.
//!
//! This module turns a declarative [`ExperimentConfig`] into concrete runs:
//! it resolves the model variant into an active-loss mask, materializes the
//! dataset, drives both training phases per seed, evaluates the downstream
//! classifier on the test split, and aggregates the per-seed
//! [`ResultRow`]s into results tables.  It also exports per-subspace
//! embeddings with a 2-D principal-component projection for visualization.

mod config;
mod project;
mod runner;
mod table;
mod variants;

pub use config::{
    AblationFlags, AttributeDatasetConfig, DatasetRef, ExperimentConfig, OptimizerKind,
    TrainSchedule, CONFIG_SCHEMA_VERSION,
};
pub use project::{
    export_embeddings, pca_project, EmbeddingExport, Projection, EMBEDDINGS_FILE, PROJECTION_FILE,
    SUBSPACE_TAGS,
};
pub use runner::{
    evaluate_run, load_repr_bundle, materialize_dataset, read_result_row, run_downstream_phase,
    run_experiment, run_repr_phase, run_single, ResultRow, RunPaths,
};
pub use table::{results_table, write_results_csv, ResultsTable, Stat, TableRow};
pub use variants::{
    downstream_input_vector, variant_loss_mask, ActiveTerms, DownstreamInput, Variant,
};

/// Errors specific to experiment configuration and orchestration.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// The configuration file could not be read or parsed.
    #[error("failed to parse config {path}: {reason}")]
    ConfigParse { path: String, reason: String },
    /// The declared schema version is not supported by this binary.
    #[error("unsupported config schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    /// An override key does not name a path in the config schema.
    #[error("unknown or invalid override {key:?}: {reason}")]
    InvalidOverride { key: String, reason: String },
    /// Ablation flags, weights, or downstream input contradict the variant.
    #[error("inconsistent config: {0}")]
    InconsistentConfig(String),
    /// A config field is outside its documented domain.
    #[error("invalid config value: {0}")]
    InvalidValue(String),
    /// results_table was called with no rows.
    #[error("cannot build a results table from zero rows")]
    EmptyRows,
    /// A run directory lacks its metrics file.
    #[error("missing metrics file: {path}")]
    MissingMetricsFile { path: String },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

impl ExperimentError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
