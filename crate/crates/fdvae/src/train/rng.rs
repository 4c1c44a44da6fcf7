//! Deterministic, labeled random streams.
//!
//! Every source of randomness in the crate is a ChaCha8 stream keyed by
//! `(seed, label)`. Streams with different labels are statistically
//! independent, and adding a new consumer with its own label never shifts
//! the draws seen by existing consumers — which is what makes ablated runs
//! comparable step for step.

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// A reproducible random stream for the given seed and purpose label.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"/");
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// A uniformly random permutation of `0..n` drawn from `rng`.
pub fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// A standard-normal tensor of the given shape drawn from `rng`.
pub fn standard_normal_tensor(
    shape: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> candle_core::Result<Tensor> {
    let normal = StandardNormal;
    let data: Vec<f32> = (0..shape.0 * shape.1)
        .map(|_| normal.sample(rng))
        .collect();
    Tensor::from_vec(data, shape, &crate::device())
}
