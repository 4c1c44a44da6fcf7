//! The 60-dim latent code and its fixed three-way subspace partition.

use candle_core::Tensor;
use rand::seq::SliceRandom;

use super::{shape_mismatch, ModelError};
use crate::train::stream;

/// Total latent dimensionality.
pub const LATENT_DIM: usize = 60;
/// Dimensionality of each of the three subspaces.
pub const SUBSPACE_DIM: usize = 20;

/// Diagonal-Gaussian posterior parameters, shape `[B, 60]` each.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianPosterior {
    pub fn batch_size(&self) -> usize {
        self.mu.dims()[0]
    }
}

/// The latent code split into target / protected / mutual subspaces.
///
/// Concatenation order is fixed as `(z_t, z_p, z_m)` everywhere; splitting
/// and concatenating are exact inverses.
#[derive(Debug, Clone)]
pub struct LatentPartition {
    pub z_t: Tensor,
    pub z_p: Tensor,
    pub z_m: Tensor,
}

impl LatentPartition {
    /// Split a `[B, 60]` code into the three `[B, 20]` subspaces.
    pub fn split(z: &Tensor) -> Result<Self, ModelError> {
        if z.dims().len() != 2 || z.dims()[1] != LATENT_DIM {
            return Err(shape_mismatch("latent split", format!("[B, {LATENT_DIM}]"), z));
        }
        Ok(Self {
            z_t: z.narrow(1, 0, SUBSPACE_DIM)?,
            z_p: z.narrow(1, SUBSPACE_DIM, SUBSPACE_DIM)?,
            z_m: z.narrow(1, 2 * SUBSPACE_DIM, SUBSPACE_DIM)?,
        })
    }

    /// Concatenate back to `[B, 60]` in the fixed order.
    pub fn concat(&self) -> Result<Tensor, ModelError> {
        Ok(Tensor::cat(&[&self.z_t, &self.z_p, &self.z_m], 1)?)
    }

    pub fn batch_size(&self) -> usize {
        self.z_t.dims()[0]
    }

    pub fn detach(&self) -> Self {
        Self {
            z_t: self.z_t.detach(),
            z_p: self.z_p.detach(),
            z_m: self.z_m.detach(),
        }
    }
}

/// `z = mu + exp(log_var / 2) * noise`, then split into subspaces.
///
/// `noise` must be a `[B, 60]` standard-normal sample drawn by the caller;
/// keeping the draw outside makes every training step replayable.
pub fn reparameterize(
    posterior: &GaussianPosterior,
    noise: &Tensor,
) -> Result<LatentPartition, ModelError> {
    if noise.dims() != posterior.mu.dims() {
        return Err(shape_mismatch(
            "reparameterize",
            format!("{:?}", posterior.mu.dims()),
            noise,
        ));
    }
    let std = ((&posterior.log_var * 0.5)?).exp()?;
    let z = (&posterior.mu + (std * noise)?)?;
    LatentPartition::split(&z)
}

/// Permute each subspace independently along the batch axis.
///
/// The result is a sample from the product of the per-subspace marginals:
/// every subspace keeps exactly the same multiset of rows, but joint
/// cross-subspace structure is destroyed. Needs `B >= 2`.
pub fn shuffle_subspaces(part: &LatentPartition, seed: u64) -> Result<LatentPartition, ModelError> {
    let b = part.batch_size();
    let blocks = shuffle_rows(
        &[&part.z_t, &part.z_p, &part.z_m],
        b,
        seed,
    )?;
    let mut it = blocks.into_iter();
    Ok(LatentPartition {
        z_t: it.next().unwrap(),
        z_p: it.next().unwrap(),
        z_m: it.next().unwrap(),
    })
}

/// Same operation for an arbitrary block structure over a `[B, D]` code;
/// `bounds` are cumulative block boundaries, e.g. `[30, 60]` for two halves.
pub fn shuffle_blocks(z: &Tensor, bounds: &[usize], seed: u64) -> Result<Tensor, ModelError> {
    let dims = z.dims();
    if dims.len() != 2 || *bounds.last().unwrap_or(&0) != dims[1] {
        return Err(shape_mismatch("shuffle_blocks", "[B, D] with bounds ending at D", z));
    }
    let mut blocks = Vec::new();
    let mut start = 0;
    for &end in bounds {
        blocks.push(z.narrow(1, start, end - start)?);
        start = end;
    }
    let refs: Vec<&Tensor> = blocks.iter().collect();
    let shuffled = shuffle_rows(&refs, dims[0], seed)?;
    let refs: Vec<&Tensor> = shuffled.iter().collect();
    Ok(Tensor::cat(&refs, 1)?)
}

fn shuffle_rows(blocks: &[&Tensor], batch: usize, seed: u64) -> Result<Vec<Tensor>, ModelError> {
    if batch < 2 {
        return Err(ModelError::BatchTooSmall { batch });
    }
    let mut rng = stream(seed, "shuffle");
    let mut out = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut perm: Vec<u32> = (0..batch as u32).collect();
        perm.shuffle(&mut rng);
        let idx = Tensor::from_vec(perm, batch, &crate::device())?;
        out.push(block.contiguous()?.index_select(&idx, 0)?);
    }
    Ok(out)
}
