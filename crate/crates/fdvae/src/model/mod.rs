//! Encoder, decoder, total-correlation discriminator, attribute heads, and
//! the downstream transform, together with the latent subspace partition and
//! checkpoint serialization.
//!
//! The latent code is 60-dimensional, split into three fixed 20-dim
//! subspaces in the order (target, protected, mutual). Layer geometry is
//! pinned by the shape tests module-by-module; see [`bundle`].

mod bundle;
mod checkpoint;
mod latent;
mod layers;

pub use bundle::{
    DownstreamHeads, Encoder, Decoder, ModelBundle, IMAGE_CHANNELS, IMAGE_SIZE, SENSITIVE_DIM,
};
pub use checkpoint::Checkpoint;
pub use latent::{
    reparameterize, shuffle_blocks, shuffle_subspaces, GaussianPosterior, LatentPartition,
    LATENT_DIM, SUBSPACE_DIM,
};
pub use layers::{classify_head, Affine, Conv2d, ConvTranspose2d, Mlp};

use thiserror::Error;

/// Errors from model construction, execution, and checkpoint IO.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{op}: expected shape {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("batch of {batch} is too small: subspace shuffling needs at least 2 samples")]
    BatchTooSmall { batch: usize },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_mismatch(
    op: &'static str,
    expected: impl Into<String>,
    got: &candle_core::Tensor,
) -> ModelError {
    ModelError::ShapeMismatch {
        op,
        expected: expected.into(),
        got: format!("{:?}", got.dims()),
    }
}
