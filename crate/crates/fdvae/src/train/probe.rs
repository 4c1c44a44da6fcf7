//! Diagnostic linear probes over frozen embeddings.
//!
//! A probe is a fresh scalar-logit affine head fit with full-batch descent.
//! It measures how linearly decodable a label is from a representation —
//! the encoder being probed never appears in the computation graph.

use candle_core::Tensor;

use crate::losses::binary_cross_entropy;
use crate::model::{classify_head, Affine};

use super::rng::stream;
use super::{Adam, TrainError};

/// A fitted probe and its accuracy on the data it was fit to.
#[derive(Debug)]
pub struct ProbeReport {
    pub head: Affine,
    pub train_accuracy: f64,
}

/// Fit a linear probe of `labels` on the rows of `x` (`[N, D]`), full-batch,
/// `epochs` steps at learning rate `lr`.
pub fn train_linear_probe(
    x: &Tensor,
    labels: &[u8],
    seed: u64,
    epochs: usize,
    lr: f64,
) -> Result<ProbeReport, TrainError> {
    let dims = x.dims();
    if dims.len() != 2 || dims[0] != labels.len() {
        return Err(TrainError::Config(format!(
            "probe input {dims:?} does not match {} labels",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(TrainError::EmptyDataset {
            split: "probe".into(),
        });
    }
    if labels.iter().all(|&v| v == labels[0]) {
        return Err(TrainError::DegenerateLabels {
            context: "train_linear_probe".into(),
        });
    }

    let mut rng = stream(seed, "init/probe");
    let head = Affine::new(&mut rng, dims[1], 1)?;
    let mut opt = Adam::new(head.vars(), lr)?;
    let y = Tensor::from_vec(
        labels.iter().map(|&v| v as f32).collect::<Vec<f32>>(),
        labels.len(),
        &crate::device(),
    )?;
    for epoch in 0..epochs {
        let logits = classify_head(&head, x)?;
        let loss = binary_cross_entropy(&logits, &y)?;
        let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                step: epoch,
                component: "probe".into(),
            });
        }
        opt.step(&loss.backward()?)?;
    }

    let train_accuracy = probe_accuracy(&head, x, labels)?;
    Ok(ProbeReport {
        head,
        train_accuracy,
    })
}

/// Fraction of rows where the probe's hard prediction (logit > 0) matches.
pub fn probe_accuracy(head: &Affine, x: &Tensor, labels: &[u8]) -> Result<f64, TrainError> {
    if x.dims().len() != 2 || x.dims()[0] != labels.len() || labels.is_empty() {
        return Err(TrainError::Config(format!(
            "probe input {:?} does not match {} labels",
            x.dims(),
            labels.len()
        )));
    }
    let logits = classify_head(head, x)?.to_vec1::<f32>()?;
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(l, &y)| u8::from(**l > 0.0) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
