//! Seeded batch iteration.
//!
//! Every epoch draws its own permutation from the stream keyed by
//! `(seed, epoch)`, so run N's epoch k sees exactly the same sample order as
//! any other run with the same seed — independent of how many epochs were
//! iterated before.

use candle_core::Tensor;

use super::{DataError, ImageDataset};
use crate::train::{permutation, stream};

/// A dense batch of images with both label vectors, as tensors for the
/// models and as bit vectors for bookkeeping.
#[derive(Debug, Clone)]
pub struct LabeledImageBatch {
    /// `[B, 3, 64, 64]`, values in `[-1, 1]`.
    pub images: Tensor,
    /// `[B]` float targets in {0, 1}.
    pub targets: Tensor,
    /// `[B]` float protected labels in {0, 1}.
    pub protected: Tensor,
    pub target_bits: Vec<u8>,
    pub protected_bits: Vec<u8>,
    /// Dataset indices of the batch rows, in batch order.
    pub indices: Vec<usize>,
}

impl LabeledImageBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Deterministic epoch-keyed batch source over one dataset.
pub struct BatchStream<'a> {
    dataset: &'a ImageDataset,
    batch_size: usize,
    seed: u64,
    drop_last: bool,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        dataset: &'a ImageDataset,
        batch_size: usize,
        seed: u64,
        drop_last: bool,
    ) -> Result<Self, DataError> {
        if dataset.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(DataError::ZeroBatchSize);
        }
        Ok(Self {
            dataset,
            batch_size,
            seed,
            drop_last,
        })
    }

    /// Batches per epoch under the configured `drop_last` policy.
    pub fn batches_per_epoch(&self) -> usize {
        let n = self.dataset.len();
        if self.drop_last {
            n / self.batch_size
        } else {
            n.div_ceil(self.batch_size)
        }
    }

    /// The sample order for one epoch (exposed for reproducibility tests).
    pub fn epoch_permutation(&self, epoch: usize) -> Vec<usize> {
        permutation(
            self.dataset.len(),
            &mut stream(self.seed, &format!("batch/epoch-{epoch}")),
        )
    }

    /// Iterate the batches of the given epoch.
    pub fn epoch(&self, epoch: usize) -> EpochIter<'a> {
        EpochIter {
            dataset: self.dataset,
            order: self.epoch_permutation(epoch),
            batch_size: self.batch_size,
            drop_last: self.drop_last,
            cursor: 0,
        }
    }
}

/// Single-consumer iterator over one epoch's batches.
pub struct EpochIter<'a> {
    dataset: &'a ImageDataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    cursor: usize,
}

impl Iterator for EpochIter<'_> {
    type Item = Result<LabeledImageBatch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        let remaining = self.order.len() - self.cursor;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let indices = self.order[self.cursor..self.cursor + take].to_vec();
        self.cursor += take;
        Some(build_batch(self.dataset, indices))
    }
}

fn build_batch(dataset: &ImageDataset, indices: Vec<usize>) -> Result<LabeledImageBatch, DataError> {
    let b = indices.len();
    let mut flat = Vec::with_capacity(b * 3 * 64 * 64);
    let mut target_bits = Vec::with_capacity(b);
    let mut protected_bits = Vec::with_capacity(b);
    for &i in &indices {
        flat.extend_from_slice(&dataset.pixels(i)?);
        let r = dataset.record(i);
        target_bits.push(r.target);
        protected_bits.push(r.protected);
    }
    let device = crate::device();
    Ok(LabeledImageBatch {
        images: Tensor::from_vec(flat, (b, 3, 64, 64), &device)?,
        targets: Tensor::from_vec(
            target_bits.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            b,
            &device,
        )?,
        protected: Tensor::from_vec(
            protected_bits.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            b,
            &device,
        )?,
        target_bits,
        protected_bits,
        indices,
    })
}
