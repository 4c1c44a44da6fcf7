//! Model variants, their active loss terms, and downstream input assembly.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::{Affine, LATENT_DIM, SENSITIVE_DIM, SUBSPACE_DIM};

use super::config::ExperimentConfig;
use super::ExperimentError;

/// The trainable model family. Every variant shares the encoder/decoder
/// geometry; they differ only in which loss terms are active and which
/// latent dims feed the downstream task head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full fairness-aware disentangling objective: reconstruction, KL,
    /// subspace total correlation, attribute pull-in, and leakage adversary.
    Fdvae,
    /// Plain VAE baseline: reconstruction + KL at weight 1.
    Vae,
    /// KL-weighted VAE: reconstruction + kl_beta·KL.
    BetaVae,
    /// Disentangling baseline: reconstruction + KL + α·TC with a
    /// density-ratio discriminator, no attribute supervision.
    FactorVae,
    /// Approximation of the sensitive/non-sensitive block method: TC over a
    /// (30, 30) block split plus a protected-attribute predictiveness head
    /// on the sensitive block. Labeled "approx" because the original is
    /// reproduced in spirit, not detail.
    FfvaeApprox,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Fdvae,
        Variant::Vae,
        Variant::BetaVae,
        Variant::FactorVae,
        Variant::FfvaeApprox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Fdvae => "fdvae",
            Variant::Vae => "vae",
            Variant::BetaVae => "beta_vae",
            Variant::FactorVae => "factor_vae",
            Variant::FfvaeApprox => "ffvae_approx",
        }
    }

    /// Block boundaries (cumulative end indices) for discriminator fakes:
    /// independence is destroyed *between* these blocks by shuffling each
    /// block's rows independently.
    pub fn shuffle_bounds(self) -> &'static [usize] {
        match self {
            Variant::FfvaeApprox => &[SENSITIVE_DIM, LATENT_DIM],
            _ => &[SUBSPACE_DIM, 2 * SUBSPACE_DIM, LATENT_DIM],
        }
    }

    /// The downstream input used when the config leaves it unspecified.
    pub fn default_downstream_input(self) -> DownstreamInput {
        match self {
            Variant::Fdvae => DownstreamInput::ZtPlusTransformedZm,
            Variant::Vae | Variant::BetaVae | Variant::FactorVae => DownstreamInput::FullZ,
            Variant::FfvaeApprox => DownstreamInput::NonsensitiveOnly,
        }
    }

    /// Downstream inputs that are meaningful for this variant.
    pub fn allowed_downstream_inputs(self) -> &'static [DownstreamInput] {
        match self {
            Variant::Fdvae => &[
                DownstreamInput::ZtOnly,
                DownstreamInput::ZtPlusRawZm,
                DownstreamInput::ZtPlusTransformedZm,
            ],
            Variant::Vae => &[DownstreamInput::FullZ],
            Variant::BetaVae | Variant::FactorVae => &[
                DownstreamInput::FullZ,
                DownstreamInput::LatentRemovalK1,
                DownstreamInput::LatentRemovalK2,
            ],
            Variant::FfvaeApprox => &[
                DownstreamInput::SensitiveOnly,
                DownstreamInput::NonsensitiveOnly,
            ],
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which latent dims feed the downstream task head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownstreamInput {
    /// The whole 60-dim code (baselines that keep no subspace semantics).
    FullZ,
    /// Target-attribute subspace alone.
    ZtOnly,
    /// Element-wise sum `z_t + z_m` (untransformed mutual block).
    ZtPlusRawZm,
    /// Element-wise sum `z_t + f(z_m)` with the learned transform `f`.
    ZtPlusTransformedZm,
    /// The designated 30-dim sensitive block (ffvae_approx probing).
    SensitiveOnly,
    /// The complementary 30-dim non-sensitive block (ffvae_approx probing).
    NonsensitiveOnly,
    /// Full code with the single most protected-correlated dim zeroed.
    LatentRemovalK1,
    /// Full code with the two most protected-correlated dims zeroed.
    LatentRemovalK2,
}

impl DownstreamInput {
    pub fn as_str(self) -> &'static str {
        match self {
            DownstreamInput::FullZ => "full_z",
            DownstreamInput::ZtOnly => "zt_only",
            DownstreamInput::ZtPlusRawZm => "zt_plus_raw_zm",
            DownstreamInput::ZtPlusTransformedZm => "zt_plus_transformed_zm",
            DownstreamInput::SensitiveOnly => "sensitive_only",
            DownstreamInput::NonsensitiveOnly => "nonsensitive_only",
            DownstreamInput::LatentRemovalK1 => "latent_removal_k1",
            DownstreamInput::LatentRemovalK2 => "latent_removal_k2",
        }
    }

    /// Width of the task head's input vector.
    pub fn task_in_dim(self) -> usize {
        match self {
            DownstreamInput::FullZ
            | DownstreamInput::LatentRemovalK1
            | DownstreamInput::LatentRemovalK2 => LATENT_DIM,
            DownstreamInput::ZtOnly
            | DownstreamInput::ZtPlusRawZm
            | DownstreamInput::ZtPlusTransformedZm => SUBSPACE_DIM,
            DownstreamInput::SensitiveOnly | DownstreamInput::NonsensitiveOnly => SENSITIVE_DIM,
        }
    }

    /// Whether the learned transform `f` (and its adversary) participate.
    pub fn uses_transform(self) -> bool {
        matches!(self, DownstreamInput::ZtPlusTransformedZm)
    }

    /// Number of dims to zero for latent-removal inputs.
    pub fn removal_k(self) -> Option<usize> {
        match self {
            DownstreamInput::LatentRemovalK1 => Some(1),
            DownstreamInput::LatentRemovalK2 => Some(2),
            _ => None,
        }
    }
}

impl std::fmt::Display for DownstreamInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which representation-phase loss terms a run actually optimizes.
/// A term is active only when its variant includes it, its ablation flag is
/// set, *and* its weight is positive — so zero-weighted terms vanish from
/// both the objective and the logs instead of lingering as zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveTerms {
    /// Weight on the KL term (always active).
    pub kl_weight: f64,
    /// Subspace total-correlation term + its density-ratio discriminator.
    pub tc: bool,
    /// Attribute pull-in heads t(z_t), p(z_p).
    pub cls: bool,
    /// Leakage adversaries p̃(z_t), t̃(z_p).
    pub adv: bool,
    /// Protected-attribute predictiveness head on the sensitive block.
    pub sensitive: bool,
}

impl ActiveTerms {
    /// The discriminator exists and trains only when the TC term is live.
    pub fn needs_discriminator(&self) -> bool {
        self.tc
    }
}

/// Resolve a validated config into its active loss terms.
pub fn variant_loss_mask(config: &ExperimentConfig) -> Result<ActiveTerms, ExperimentError> {
    config.validate()?;
    let w = &config.weights;
    let ab = &config.ablation;
    let terms = match config.variant {
        Variant::Vae => ActiveTerms {
            kl_weight: 1.0,
            tc: false,
            cls: false,
            adv: false,
            sensitive: false,
        },
        Variant::BetaVae => ActiveTerms {
            kl_weight: w.kl_beta,
            tc: false,
            cls: false,
            adv: false,
            sensitive: false,
        },
        Variant::FactorVae => ActiveTerms {
            kl_weight: w.kl_beta,
            tc: w.alpha > 0.0,
            cls: false,
            adv: false,
            sensitive: false,
        },
        Variant::Fdvae => ActiveTerms {
            kl_weight: w.kl_beta,
            tc: w.alpha > 0.0,
            cls: ab.use_cls && w.beta > 0.0,
            adv: ab.use_adv && w.gamma > 0.0,
            sensitive: false,
        },
        Variant::FfvaeApprox => ActiveTerms {
            kl_weight: w.kl_beta,
            tc: w.alpha > 0.0,
            cls: false,
            adv: false,
            sensitive: w.beta > 0.0,
        },
    };
    Ok(terms)
}

/// Assemble the task-head input from a full `[B, 60]` latent code.
///
/// `transform` is required exactly when `input.uses_transform()`;
/// `removal_dims` is consulted only for latent-removal inputs and must then
/// hold exactly `k` in-range dims.
pub fn downstream_input_vector(
    input: DownstreamInput,
    z: &Tensor,
    transform: Option<&Affine>,
    removal_dims: &[usize],
) -> Result<Tensor, ExperimentError> {
    let dims = z.dims();
    if dims.len() != 2 || dims[1] != LATENT_DIM {
        return Err(ExperimentError::InvalidValue(format!(
            "downstream input expects [B, {LATENT_DIM}] latents, got {dims:?}"
        )));
    }
    let zt = z.narrow(1, 0, SUBSPACE_DIM)?;
    let zm = z.narrow(1, 2 * SUBSPACE_DIM, SUBSPACE_DIM)?;
    match input {
        DownstreamInput::FullZ => Ok(z.clone()),
        DownstreamInput::ZtOnly => Ok(zt),
        DownstreamInput::ZtPlusRawZm => Ok((zt + zm)?),
        DownstreamInput::ZtPlusTransformedZm => {
            let f = transform.ok_or_else(|| {
                ExperimentError::InconsistentConfig(
                    "zt_plus_transformed_zm requires the transform head".into(),
                )
            })?;
            let zn = f.forward(&zm.contiguous()?).map_err(crate::model::ModelError::from)?;
            Ok((zt + zn)?)
        }
        DownstreamInput::SensitiveOnly => Ok(z.narrow(1, 0, SENSITIVE_DIM)?),
        DownstreamInput::NonsensitiveOnly => Ok(z.narrow(1, SENSITIVE_DIM, SENSITIVE_DIM)?),
        DownstreamInput::LatentRemovalK1 | DownstreamInput::LatentRemovalK2 => {
            let k = input.removal_k().expect("removal input has k");
            if removal_dims.len() != k {
                return Err(ExperimentError::InconsistentConfig(format!(
                    "{input} needs exactly {k} removal dims, got {}",
                    removal_dims.len()
                )));
            }
            let mut mask = vec![1.0f32; LATENT_DIM];
            for &d in removal_dims {
                if d >= LATENT_DIM {
                    return Err(ExperimentError::InvalidValue(format!(
                        "removal dim {d} out of range 0..{LATENT_DIM}"
                    )));
                }
                mask[d] = 0.0;
            }
            let mask = Tensor::from_vec(mask, (1, LATENT_DIM), z.device())?;
            Ok(z.broadcast_mul(&mask)?)
        }
    }
}
