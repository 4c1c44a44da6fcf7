//! Two-phase training: representation learning, then frozen-encoder
//! downstream prediction.
//!
//! - [`rng`] — deterministic, labeled random streams; all randomness in the
//!   crate flows through these.
//! - [`adam`] — a small Adam implementation over `candle` variables.
//! - [`log`] — JSONL step logs and their digests.
//! - [`repr`] — phase one: encoder/decoder/discriminator/heads.
//! - [`downstream`] — phase two: latent tables, removal selection, heads.
//! - [`probe`] — linear diagnostic probes on frozen embeddings.

mod adam;
mod downstream;
mod log;
mod probe;
mod repr;
mod rng;

pub use adam::Adam;
pub use downstream::{
    embed_dataset, evaluate_heads, predict_table, select_removal_latents, train_downstream,
    DownstreamArtifacts, LatentTable, DOWNSTREAM_FINAL, DOWNSTREAM_LOG, DOWNSTREAM_VAL_LOG,
};
pub use log::{
    log_digest, read_step_records, write_step_records, DownstreamStepRecord, JsonlLogger,
    StepRecord, ValRecord,
};
pub use probe::{probe_accuracy, train_linear_probe, ProbeReport};
pub use repr::{train_representation, ReprArtifacts, REPR_FINAL, REPR_LATEST, REPR_LOG};
pub use rng::{permutation, standard_normal_tensor, stream};

use std::path::PathBuf;

/// Errors raised while training or evaluating models.
#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}, step {step} ({component})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        component: String,
    },
    #[error("dataset split `{split}` is empty")]
    EmptyDataset { split: String },
    #[error("batch size {batch_size} is too small; need at least {min}")]
    BatchTooSmall { batch_size: usize, min: usize },
    #[error("all labels identical in `{context}`; nothing to fit")]
    DegenerateLabels { context: String },
    #[error("corrupt training log {path}: line {line}: {reason}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}
