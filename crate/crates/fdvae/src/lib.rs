//! # fdvae
//!
//! Fairness-aware disentangling VAE for representation learning on biased
//! image data, plus the evaluation machinery around it.
//!
//! The crate is organized around a two-phase pipeline:
//! - [`data`] — biased/balanced split composition, synthetic biased image
//!   generation, attribute-annotated image datasets, batching.
//! - [`model`] — encoder/decoder, total-correlation discriminator, attribute
//!   heads, latent subspace partition, checkpoints.
//! - [`losses`] — every training objective as a pure function of model
//!   outputs, with fixed minimization sign conventions.
//! - [`train`] — representation learning (alternating encoder/discriminator/
//!   adversary steps) and downstream classification on a frozen encoder.
//! - [`metrics`] — group confusion statistics, equal opportunity, equalized
//!   odds, equalized accuracy.
//! - [`experiments`] — model variants, ablations, seeded runs, results
//!   tables, embedding exports.
//! - [`plot`] — SVG emission for training curves and embedding projections.

pub mod data;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod train;

/// The device every tensor in this crate lives on.
///
/// Training is deliberately single-stream CPU: determinism of the full
/// training-log scalar sequence is part of the contract.
pub fn device() -> candle_core::Device {
    candle_core::Device::Cpu
}
