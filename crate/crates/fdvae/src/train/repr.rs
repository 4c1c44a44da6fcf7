//! Phase one: representation learning.
//!
//! Per batch: one descent step on the encoder/decoder/heads objective, one
//! step for the leakage adversaries on detached latents, and one step for
//! the density-ratio discriminator on detached real-vs-shuffled latents —
//! each behind its own optimizer so no step can move another step's
//! parameters. Terms a variant does not activate are never computed, so
//! ablated runs consume identical random streams and log identical records
//! to their reduced counterparts.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{BatchStream, LabeledImageBatch, SplitSet};
use crate::experiments::{variant_loss_mask, ActiveTerms, ExperimentConfig};
use crate::losses::{
    binary_cross_entropy, decorrelation_adv_loss, decorrelation_cls_loss, discriminator_loss,
    kl_divergence, reconstruction_loss, tc_loss, total_representation_loss, LossError,
    LossReport, LossWeights, ReprLossTerms,
};
use crate::model::{
    classify_head, reparameterize, shuffle_blocks, Checkpoint, ModelBundle, LATENT_DIM,
    SENSITIVE_DIM,
};

use super::log::{log_digest, JsonlLogger, StepRecord};
use super::rng::{standard_normal_tensor, stream};
use super::{Adam, TrainError};

/// Everything phase one leaves behind: the live bundle, the final
/// checkpoint (also on disk), and the training log.
pub struct ReprArtifacts {
    pub bundle: ModelBundle,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// File written after every completed epoch (overwritten in place).
pub const REPR_LATEST: &str = "repr-latest.fdvk";
/// File written once training finishes.
pub const REPR_FINAL: &str = "repr-final.fdvk";
/// Step log for this phase.
pub const REPR_LOG: &str = "repr.jsonl";

/// Train the representation model for `config.schedule.repr_epochs` epochs
/// on `splits.train`. Artifacts land under `out_dir`:
/// `checkpoints/repr-latest.fdvk` (overwritten each epoch),
/// `checkpoints/repr-final.fdvk`, and `logs/repr.jsonl` with one record per
/// optimization step.
pub fn train_representation(
    config: &ExperimentConfig,
    splits: &SplitSet,
    seed: u64,
    out_dir: &Path,
) -> Result<ReprArtifacts, TrainError> {
    let mask = variant_loss_mask(config).map_err(|e| TrainError::Config(e.to_string()))?;
    let schedule = &config.schedule;
    let weights = LossWeights {
        kl_beta: mask.kl_weight,
        ..config.weights
    };
    let bounds = config.variant.shuffle_bounds();

    if splits.train.is_empty() {
        return Err(TrainError::EmptyDataset {
            split: "train".into(),
        });
    }
    // Partial batches only matter to the discriminator, which cannot
    // shuffle a single row; drop them when it is active.
    let drop_last = mask.tc && splits.train.len() >= schedule.batch_size;
    let batches = BatchStream::new(&splits.train, schedule.batch_size, seed, drop_last)?;

    let bundle = ModelBundle::new(seed)?;
    let mut opt_model = Adam::with_params(
        bundle.model_vars(),
        schedule.repr_lr,
        schedule.beta1,
        schedule.beta2,
        1e-8,
    )?;
    let mut opt_disc = Adam::with_params(
        bundle.discriminator_vars(),
        schedule.repr_lr,
        schedule.beta1,
        schedule.beta2,
        1e-8,
    )?;
    let mut opt_adv = Adam::with_params(
        bundle.adversary_vars(),
        schedule.repr_lr,
        schedule.beta1,
        schedule.beta2,
        1e-8,
    )?;

    let mut noise_rng = stream(seed, "repr/noise");
    let mut shuffle_rng = stream(seed, "repr/shuffle");

    let log_path = out_dir.join("logs").join(REPR_LOG);
    let mut logger = JsonlLogger::create(&log_path)?;
    let checkpoint_dir = out_dir.join("checkpoints");
    let latest_path = checkpoint_dir.join(REPR_LATEST);
    let config_json = serde_json::to_string(config)?;

    let mut global_step = 0usize;
    for epoch in 0..schedule.repr_epochs {
        for batch in batches.epoch(epoch) {
            let batch = batch?;
            let report = repr_step(
                &bundle,
                &mask,
                &weights,
                bounds,
                &batch,
                &mut noise_rng,
                &mut shuffle_rng,
                &mut opt_model,
                &mut opt_adv,
                &mut opt_disc,
            )
            .map_err(|e| tag_non_finite(e, epoch, global_step))?;
            logger.append(&StepRecord {
                epoch,
                step: global_step,
                losses: report,
            })?;
            global_step += 1;
        }
        let snapshot = Checkpoint::new(
            config_json.clone(),
            epoch + 1,
            log_digest(&log_path)?,
            bundle.export_tensors()?,
        );
        snapshot.save(&latest_path)?;
    }

    let checkpoint = Checkpoint::new(
        config_json,
        schedule.repr_epochs,
        log_digest(&log_path)?,
        bundle.export_tensors()?,
    );
    let checkpoint_path = checkpoint_dir.join(REPR_FINAL);
    checkpoint.save(&checkpoint_path)?;
    Ok(ReprArtifacts {
        bundle,
        checkpoint,
        checkpoint_path,
        log_path,
    })
}

/// Attach step coordinates to non-finite-loss failures; everything else
/// passes through.
fn tag_non_finite(e: TrainError, epoch: usize, step: usize) -> TrainError {
    match e {
        TrainError::Loss(LossError::NonFiniteComponent { component, .. }) => {
            TrainError::NonFiniteLoss {
                epoch,
                step,
                component: component.to_string(),
            }
        }
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn repr_step(
    bundle: &ModelBundle,
    mask: &ActiveTerms,
    weights: &LossWeights,
    bounds: &[usize],
    batch: &LabeledImageBatch,
    noise_rng: &mut ChaCha8Rng,
    shuffle_rng: &mut ChaCha8Rng,
    opt_model: &mut Adam,
    opt_adv: &mut Adam,
    opt_disc: &mut Adam,
) -> Result<LossReport, TrainError> {
    // ---- forward ----------------------------------------------------------
    let posterior = bundle.encode(&batch.images)?;
    let noise = standard_normal_tensor((batch.len(), LATENT_DIM), noise_rng)?;
    let part = reparameterize(&posterior, &noise)?;
    let z = part.concat()?;

    let mut terms = ReprLossTerms {
        recon: Some(reconstruction_loss(&batch.images, &bundle.decode(&z)?)?),
        kl: Some(kl_divergence(&posterior)?),
        ..Default::default()
    };
    if mask.tc {
        terms.tc = Some(tc_loss(&bundle.discriminate(&z)?)?);
    }
    if mask.cls {
        let logit_t = classify_head(&bundle.heads.cls_t, &part.z_t.contiguous()?)?;
        let logit_p = classify_head(&bundle.heads.cls_p, &part.z_p.contiguous()?)?;
        let (cls_t, cls_p) =
            decorrelation_cls_loss(&logit_t, &batch.targets, &logit_p, &batch.protected)?;
        terms.cls_t = Some(cls_t);
        terms.cls_p = Some(cls_p);
    }
    if mask.adv {
        // Encoder side: gradients flow into the latents but the adversary
        // head parameters are constants here.
        let logit_p = bundle
            .heads
            .adv_p
            .forward_detached_params(&part.z_t.contiguous()?)?
            .squeeze(1)?;
        let logit_t = bundle
            .heads
            .adv_t
            .forward_detached_params(&part.z_p.contiguous()?)?
            .squeeze(1)?;
        let adv = decorrelation_adv_loss(&logit_p, &batch.protected, &logit_t, &batch.targets)?;
        terms.adv_t = Some(adv.encoder_t);
        terms.adv_p = Some(adv.encoder_p);
    }
    if mask.sensitive {
        let z_sens = z.narrow(1, 0, SENSITIVE_DIM)?.contiguous()?;
        let logit = classify_head(&bundle.heads.sensitive, &z_sens)?;
        terms.sensitive = Some(binary_cross_entropy(&logit, &batch.protected)?);
    }
    // Discriminator objective on detached latents, computed up front so the
    // step report carries it; the parameter update happens below.
    let disc_loss = if mask.tc {
        let z_real = z.detach();
        let fake_seed = shuffle_rng.gen::<u64>();
        let z_fake = shuffle_blocks(&z_real, bounds, fake_seed)?;
        let logits_real = bundle.discriminate(&z_real)?;
        let logits_fake = bundle.discriminate(&z_fake)?;
        Some(discriminator_loss(&logits_real, &logits_fake)?)
    } else {
        None
    };
    terms.disc = disc_loss.clone();

    // ---- encoder/decoder/heads step ----------------------------------------
    let (total, report) = total_representation_loss(&terms, weights)?;
    let grads = total.backward()?;
    opt_model.step(&grads)?;

    // ---- leakage-adversary step ---------------------------------------------
    if mask.adv {
        let detached = part.detach();
        let logit_p = classify_head(&bundle.heads.adv_p, &detached.z_t.contiguous()?)?;
        let logit_t = classify_head(&bundle.heads.adv_t, &detached.z_p.contiguous()?)?;
        let adv = decorrelation_adv_loss(&logit_p, &batch.protected, &logit_t, &batch.targets)?;
        let grads = adv.adversary.backward()?;
        opt_adv.step(&grads)?;
    }

    // ---- discriminator step --------------------------------------------------
    if let Some(loss) = disc_loss {
        let grads = loss.backward()?;
        opt_disc.step(&grads)?;
    }

    Ok(report)
}
