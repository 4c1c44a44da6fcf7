//! Phase two: downstream prediction on a frozen encoder.
//!
//! The encoder is never part of this phase's graphs: every split is embedded
//! once up front (posterior means, no sampling), and training runs on those
//! fixed tables. The task head `d` and transform `f` descend on
//! `task − adversary`; the adversary `d̃` descends on its own objective over
//! detached transform outputs.

use std::path::{Path, PathBuf};

use candle_core::Tensor;

use crate::data::{ImageDataset, SplitSet};
use crate::experiments::{downstream_input_vector, DownstreamInput, ExperimentConfig};
use crate::losses::{binary_cross_entropy, downstream_loss};
use crate::metrics::{group_confusion, MetricReport};
use crate::model::{
    classify_head, Checkpoint, DownstreamHeads, ModelBundle, IMAGE_CHANNELS, IMAGE_SIZE,
    SUBSPACE_DIM,
};

use super::log::{log_digest, DownstreamStepRecord, JsonlLogger, ValRecord};
use super::rng::{permutation, stream};
use super::{Adam, TrainError};

/// Checkpoint holding the best-by-validation downstream heads.
pub const DOWNSTREAM_FINAL: &str = "downstream-final.fdvk";
/// Per-step log for this phase.
pub const DOWNSTREAM_LOG: &str = "downstream.jsonl";
/// Per-epoch validation summaries.
pub const DOWNSTREAM_VAL_LOG: &str = "downstream-val.jsonl";

/// A dataset embedded to latent space: one `[N, 60]` row per record, in
/// dataset order, plus the labels.
pub struct LatentTable {
    pub z: Tensor,
    pub y_t: Vec<u8>,
    pub y_p: Vec<u8>,
}

impl LatentTable {
    pub fn len(&self) -> usize {
        self.y_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_t.is_empty()
    }
}

/// Encode every record to its posterior mean. Deterministic: no sampling,
/// row order equals dataset order, and the chunk size does not affect the
/// result.
pub fn embed_dataset(
    bundle: &ModelBundle,
    dataset: &ImageDataset,
    batch_size: usize,
) -> Result<LatentTable, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset {
            split: "embed".into(),
        });
    }
    let n = dataset.len();
    let chunk = batch_size.max(1);
    let mut mus = Vec::new();
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        let mut pixels = Vec::with_capacity(len * IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE);
        for i in start..start + len {
            pixels.extend(dataset.pixels(i)?);
        }
        let x = Tensor::from_vec(
            pixels,
            (len, IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE),
            &crate::device(),
        )?;
        mus.push(bundle.encode(&x)?.mu.detach());
    }
    let refs: Vec<&Tensor> = mus.iter().collect();
    Ok(LatentTable {
        z: Tensor::cat(&refs, 0)?.contiguous()?,
        y_t: dataset.target_labels(),
        y_p: dataset.protected_labels(),
    })
}

/// The `k` latent dimensions most correlated (by |Pearson r|) with the
/// protected labels; ties broken toward the lower index. A zero-variance
/// column correlates at 0. Errs only when the labels carry no signal at all
/// (all identical).
pub fn select_removal_latents(
    z: &Tensor,
    protected: &[u8],
    k: usize,
) -> Result<Vec<usize>, TrainError> {
    let dims = z.dims();
    if dims.len() != 2 || dims[0] != protected.len() {
        return Err(TrainError::Config(format!(
            "latent table {dims:?} does not match {} protected labels",
            protected.len()
        )));
    }
    let (n, d) = (dims[0], dims[1]);
    if k == 0 || k > d {
        return Err(TrainError::Config(format!(
            "removal count {k} out of range 1..={d}"
        )));
    }
    if protected.iter().all(|&v| v == protected[0]) {
        return Err(TrainError::DegenerateLabels {
            context: "select_removal_latents".into(),
        });
    }

    let rows = z.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()?;
    let nf = n as f64;
    let sy: f64 = protected.iter().map(|&v| v as f64).sum();
    let syy: f64 = protected.iter().map(|&v| (v as f64).powi(2)).sum();
    let var_y = nf * syy - sy * sy;

    let mut scored: Vec<(usize, f64)> = (0..d)
        .map(|j| {
            let (mut sx, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
            for (row, &y) in rows.iter().zip(protected) {
                let x = row[j];
                sx += x;
                sxx += x * x;
                sxy += x * y as f64;
            }
            let var_x = nf * sxx - sx * sx;
            let r = if var_x <= 0.0 {
                0.0
            } else {
                (nf * sxy - sx * sy) / (var_x * var_y).sqrt()
            };
            (j, r.abs())
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(j, _)| j).collect())
}

/// What phase two leaves behind. `heads` carry the parameters of the
/// best-validation epoch (also checkpointed on disk).
pub struct DownstreamArtifacts {
    pub heads: DownstreamHeads,
    pub input: DownstreamInput,
    pub removal_dims: Vec<usize>,
    /// Zero-based epoch whose validation won (ties go to the earliest).
    pub best_epoch: usize,
    pub best_validation: ValRecord,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub val_log_path: PathBuf,
}

/// Train the downstream heads against `bundle`'s frozen encoder. Artifacts
/// land under `out_dir`: `checkpoints/downstream-final.fdvk` plus the two
/// phase logs.
pub fn train_downstream(
    config: &ExperimentConfig,
    bundle: &ModelBundle,
    splits: &SplitSet,
    seed: u64,
    out_dir: &Path,
) -> Result<DownstreamArtifacts, TrainError> {
    let input = config.downstream_input();
    let batch = config.schedule.batch_size;
    let train = embed_dataset(bundle, &splits.train, batch)?;
    let validation = embed_dataset(bundle, &splits.validation, batch)?;
    let removal_dims = match input.removal_k() {
        Some(k) => select_removal_latents(&train.z, &train.y_p, k)?,
        None => Vec::new(),
    };

    let fit = fit_heads(
        input,
        &config.schedule,
        &train,
        &validation,
        &removal_dims,
        seed,
        out_dir,
    )?;

    let checkpoint = Checkpoint::new(
        serde_json::to_string(config)?,
        fit.best_epoch + 1,
        log_digest(&fit.log_path)?,
        fit.heads.export_tensors()?,
    );
    let checkpoint_path = out_dir.join("checkpoints").join(DOWNSTREAM_FINAL);
    checkpoint.save(&checkpoint_path)?;

    Ok(DownstreamArtifacts {
        heads: fit.heads,
        input,
        removal_dims,
        best_epoch: fit.best_epoch,
        best_validation: fit.best_validation,
        checkpoint_path,
        log_path: fit.log_path,
        val_log_path: fit.val_log_path,
    })
}

struct FitOutcome {
    heads: DownstreamHeads,
    best_epoch: usize,
    best_validation: ValRecord,
    log_path: PathBuf,
    val_log_path: PathBuf,
}

/// The optimization core, on already-embedded tables.
fn fit_heads(
    input: DownstreamInput,
    schedule: &crate::experiments::TrainSchedule,
    train: &LatentTable,
    validation: &LatentTable,
    removal_dims: &[usize],
    seed: u64,
    out_dir: &Path,
) -> Result<FitOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset {
            split: "train".into(),
        });
    }
    if validation.is_empty() {
        return Err(TrainError::EmptyDataset {
            split: "validation".into(),
        });
    }

    let heads = DownstreamHeads::new(seed, input.task_in_dim())?;
    let mut opt_task = Adam::with_params(
        heads.task_vars(),
        schedule.downstream_lr,
        schedule.beta1,
        schedule.beta2,
        1e-8,
    )?;
    let mut opt_adv = Adam::with_params(
        heads.adversary_vars(),
        schedule.downstream_lr,
        schedule.beta1,
        schedule.beta2,
        1e-8,
    )?;

    let log_path = out_dir.join("logs").join(DOWNSTREAM_LOG);
    let val_log_path = out_dir.join("logs").join(DOWNSTREAM_VAL_LOG);
    let mut step_log = JsonlLogger::create(&log_path)?;
    let mut val_log = JsonlLogger::create(&val_log_path)?;

    let n = train.len();
    let mut best: Option<(usize, ValRecord, std::collections::BTreeMap<String, Tensor>)> = None;
    let mut global_step = 0usize;
    for epoch in 0..schedule.downstream_epochs {
        let mut order_rng = stream(seed, &format!("downstream/epoch-{epoch}"));
        let order = permutation(n, &mut order_rng);
        for chunk in order.chunks(schedule.batch_size) {
            let idx = Tensor::from_vec(
                chunk.iter().map(|&i| i as u32).collect::<Vec<u32>>(),
                chunk.len(),
                &crate::device(),
            )?;
            let z = train.z.index_select(&idx, 0)?.contiguous()?;
            let y_t = label_tensor(&train.y_t, chunk)?;
            let y_p = label_tensor(&train.y_p, chunk)?;

            let x = downstream_input_vector(input, &z, Some(&heads.transform), removal_dims)
                .map_err(|e| TrainError::Config(e.to_string()))?;
            let logit_task = classify_head(&heads.task, &x)?;

            let record = if input.uses_transform() {
                let zm = z.narrow(1, 2 * SUBSPACE_DIM, SUBSPACE_DIM)?.contiguous()?;
                let zn = heads.transform.forward(&zm)?;
                // The model step sees the adversary as a fixed function.
                let logit_adv = heads.adversary.forward_detached_params(&zn)?.squeeze(1)?;
                let (task, adversary, objective) =
                    downstream_loss(&logit_task, &y_t, &logit_adv, &y_p)?;
                opt_task.step(&objective.backward()?)?;

                // The adversary sees the transform output as fixed data.
                let logit_own = classify_head(&heads.adversary, &zn.detach())?;
                let own = binary_cross_entropy(&logit_own, &y_p)?;
                opt_adv.step(&own.backward()?)?;

                DownstreamStepRecord {
                    epoch,
                    step: global_step,
                    task: finite("task", scalar(&task)?, epoch, global_step)?,
                    adversary: Some(finite(
                        "adversary",
                        scalar(&adversary)?,
                        epoch,
                        global_step,
                    )?),
                    transform: Some(finite(
                        "transform",
                        scalar(&objective)?,
                        epoch,
                        global_step,
                    )?),
                }
            } else {
                let task = binary_cross_entropy(&logit_task, &y_t)?;
                opt_task.step(&task.backward()?)?;
                DownstreamStepRecord {
                    epoch,
                    step: global_step,
                    task: finite("task", scalar(&task)?, epoch, global_step)?,
                    adversary: None,
                    transform: None,
                }
            };
            step_log.append(&record)?;
            global_step += 1;
        }

        let report = evaluate_heads(&heads, input, validation, removal_dims, schedule.batch_size)?;
        let val = ValRecord {
            epoch,
            accuracy: report.accuracy,
            equalized_accuracy: report.equalized_accuracy,
            equal_opportunity: report.equal_opportunity,
            equalized_odds: report.equalized_odds,
        };
        val_log.append(&val)?;
        let improved = match &best {
            None => true,
            Some((_, incumbent, _)) => val.equalized_accuracy > incumbent.equalized_accuracy,
        };
        if improved {
            best = Some((epoch, val, heads.export_tensors()?));
        }
    }

    let (best_epoch, best_validation, tensors) =
        best.expect("downstream_epochs ≥ 1 guarantees one validation pass");
    heads.load_tensors(&tensors)?;
    Ok(FitOutcome {
        heads,
        best_epoch,
        best_validation,
        log_path,
        val_log_path,
    })
}

/// Hard 0/1 predictions (logit > 0) and the metric report over a table.
pub fn evaluate_heads(
    heads: &DownstreamHeads,
    input: DownstreamInput,
    table: &LatentTable,
    removal_dims: &[usize],
    batch_size: usize,
) -> Result<MetricReport, TrainError> {
    let preds = predict_table(heads, input, table, removal_dims, batch_size)?;
    let cm = group_confusion(&preds, &table.y_t, &table.y_p)?;
    Ok(MetricReport::from_confusion(&cm)?)
}

/// Hard 0/1 task predictions for every row of `table`, in row order.
pub fn predict_table(
    heads: &DownstreamHeads,
    input: DownstreamInput,
    table: &LatentTable,
    removal_dims: &[usize],
    batch_size: usize,
) -> Result<Vec<u8>, TrainError> {
    let n = table.len();
    let chunk = batch_size.max(1);
    let mut preds = Vec::with_capacity(n);
    for start in (0..n).step_by(chunk) {
        let len = chunk.min(n - start);
        let z = table.z.narrow(0, start, len)?.contiguous()?;
        let x = downstream_input_vector(input, &z, Some(&heads.transform), removal_dims)
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let logits = classify_head(&heads.task, &x)?.to_vec1::<f32>()?;
        preds.extend(logits.into_iter().map(|l| u8::from(l > 0.0)));
    }
    Ok(preds)
}

fn label_tensor(labels: &[u8], chunk: &[usize]) -> Result<Tensor, TrainError> {
    let data: Vec<f32> = chunk.iter().map(|&i| labels[i] as f32).collect();
    Ok(Tensor::from_vec(data, chunk.len(), &crate::device())?)
}

fn scalar(t: &Tensor) -> Result<f64, TrainError> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn finite(component: &str, value: f64, epoch: usize, step: usize) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFiniteLoss {
            epoch,
            step,
            component: component.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::experiments::{ExperimentConfig, Variant};
    use crate::train::{read_step_records, standard_normal_tensor, train_representation};
    use rand::Rng;

    fn tiny_splits(seed: u64) -> SplitSet {
        generate_synthetic(&SyntheticSpec {
            train: 8,
            validation: 8,
            test: 4,
            rho: 0.5,
            seed,
            noise: 0.1,
        })
        .unwrap()
    }

    fn quick_bundle(splits: &SplitSet, seed: u64, dir: &Path) -> ModelBundle {
        let mut config = ExperimentConfig::synthetic_template(Variant::Fdvae);
        config.schedule.repr_epochs = 1;
        config.schedule.batch_size = 4;
        train_representation(&config, splits, seed, dir).unwrap().bundle
    }

    /// `[n, 60]` standard-normal latents with `y_t` a fixed linear rule on
    /// `z_t` and `y_p` pseudo-random coin flips.
    fn separable_table(n: usize, seed: u64) -> LatentTable {
        let mut rng = stream(seed, "test/separable");
        let z = standard_normal_tensor((n, LATENT_DIM), &mut rng).unwrap();
        let rows = z.to_vec2::<f32>().unwrap();
        let y_t = rows
            .iter()
            .map(|r| {
                let s: f32 = r[..SUBSPACE_DIM]
                    .iter()
                    .enumerate()
                    .map(|(j, v)| if j % 2 == 0 { *v } else { -*v })
                    .sum();
                u8::from(s > 0.0)
            })
            .collect();
        let y_p = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
        LatentTable { z, y_t, y_p }
    }

    #[test]
    fn embedding_is_deterministic_ordered_and_chunk_invariant() {
        let splits = tiny_splits(31);
        let dir = tempfile::tempdir().unwrap();
        let bundle = quick_bundle(&splits, 1, dir.path());

        let a = embed_dataset(&bundle, &splits.validation, 3).unwrap();
        let b = embed_dataset(&bundle, &splits.validation, 8).unwrap();
        assert_eq!(a.z.dims(), &[8, LATENT_DIM]);
        assert_eq!(
            a.z.to_vec2::<f32>().unwrap(),
            b.z.to_vec2::<f32>().unwrap(),
            "chunk size must not affect the table"
        );
        assert_eq!(a.y_t, splits.validation.target_labels());
        assert_eq!(a.y_p, splits.validation.protected_labels());
    }

    #[test]
    fn removal_selection_finds_planted_columns() {
        let mut rng = stream(4, "test/removal");
        let n = 40;
        let y_p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
        let mut rows = standard_normal_tensor((n, 10), &mut rng)
            .unwrap()
            .to_vec2::<f32>()
            .unwrap();
        for (row, &y) in rows.iter_mut().zip(&y_p) {
            row[7] = y as f32;
            row[3] = 1.0 - y as f32;
        }
        let z = Tensor::from_vec(
            rows.concat(),
            (n, 10),
            &crate::device(),
        )
        .unwrap();
        assert_eq!(select_removal_latents(&z, &y_p, 1).unwrap(), vec![3]);
        assert_eq!(select_removal_latents(&z, &y_p, 2).unwrap(), vec![3, 7]);
    }

    #[test]
    fn removal_selection_matches_brute_force_scan() {
        let mut rng = stream(5, "test/removal-scan");
        let n = 50;
        let z = standard_normal_tensor((n, 60), &mut rng).unwrap();
        let y_p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();

        // Independent oracle: two-pass mean-centered correlations.
        let rows = z.to_vec2::<f32>().unwrap();
        let my = y_p.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let dy: Vec<f64> = y_p.iter().map(|&v| v as f64 - my).collect();
        let sy = dy.iter().map(|d| d * d).sum::<f64>().sqrt();
        let mut scores: Vec<(usize, f64)> = (0..60)
            .map(|j| {
                let mx = rows.iter().map(|r| r[j] as f64).sum::<f64>() / n as f64;
                let dx: Vec<f64> = rows.iter().map(|r| r[j] as f64 - mx).collect();
                let sx = dx.iter().map(|d| d * d).sum::<f64>().sqrt();
                let cov: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
                (j, (cov / (sx * sy)).abs())
            })
            .collect();
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = scores.iter().take(2).map(|(j, _)| *j).collect();

        assert_eq!(select_removal_latents(&z, &y_p, 2).unwrap(), expected);
    }

    #[test]
    fn removal_selection_rejects_uniform_labels() {
        let z = standard_normal_tensor((10, 4), &mut stream(6, "test/uniform")).unwrap();
        let err = select_removal_latents(&z, &[1u8; 10], 1).unwrap_err();
        assert!(matches!(err, TrainError::DegenerateLabels { .. }));
    }

    #[test]
    fn zero_variance_column_scores_zero_not_nan() {
        let mut rng = stream(7, "test/zero-var");
        let n = 20;
        let y_p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1u8)).collect();
        let mut rows = standard_normal_tensor((n, 3), &mut rng)
            .unwrap()
            .to_vec2::<f32>()
            .unwrap();
        for row in &mut rows {
            row[0] = 2.5; // constant column
        }
        let z = Tensor::from_vec(rows.concat(), (n, 3), &crate::device()).unwrap();
        let picked = select_removal_latents(&z, &y_p, 2).unwrap();
        assert!(!picked.contains(&0), "constant column must rank last");
    }

    #[test]
    fn encoder_is_bit_frozen_through_downstream() {
        let splits = tiny_splits(32);
        let dir = tempfile::tempdir().unwrap();
        let bundle = quick_bundle(&splits, 2, dir.path());
        let before: Vec<(String, Vec<f32>)> = bundle
            .export_tensors()
            .unwrap()
            .into_iter()
            .map(|(k, t)| (k, t.flatten_all().unwrap().to_vec1::<f32>().unwrap()))
            .collect();

        let mut config = ExperimentConfig::synthetic_template(Variant::Fdvae);
        config.schedule.downstream_epochs = 2;
        config.schedule.batch_size = 4;
        train_downstream(&config, &bundle, &splits, 2, dir.path()).unwrap();

        let after: Vec<(String, Vec<f32>)> = bundle
            .export_tensors()
            .unwrap()
            .into_iter()
            .map(|(k, t)| (k, t.flatten_all().unwrap().to_vec1::<f32>().unwrap()))
            .collect();
        assert_eq!(before, after, "no encoder parameter may move in phase two");
    }

    #[test]
    fn separable_latents_exceed_95_percent_validation_accuracy() {
        let train = separable_table(300, 8);
        let validation = separable_table(200, 9);
        let schedule = crate::experiments::TrainSchedule {
            downstream_epochs: 30,
            downstream_lr: 5e-2,
            batch_size: 32,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let fit = fit_heads(
            DownstreamInput::ZtOnly,
            &schedule,
            &train,
            &validation,
            &[],
            1,
            dir.path(),
        )
        .unwrap();
        assert!(
            fit.best_validation.accuracy > 0.95,
            "linear rule on z_t should be learnable: {:?}",
            fit.best_validation
        );
    }

    #[test]
    fn transform_objectives_logged_only_when_transform_runs() {
        let train = separable_table(64, 10);
        let validation = separable_table(64, 11);
        let schedule = crate::experiments::TrainSchedule {
            downstream_epochs: 1,
            batch_size: 32,
            ..Default::default()
        };
        for (input, expect_some) in [
            (DownstreamInput::ZtPlusTransformedZm, true),
            (DownstreamInput::ZtOnly, false),
        ] {
            let dir = tempfile::tempdir().unwrap();
            let fit =
                fit_heads(input, &schedule, &train, &validation, &[], 1, dir.path()).unwrap();
            let records: Vec<DownstreamStepRecord> = read_step_records(&fit.log_path).unwrap();
            assert_eq!(records.len(), 2);
            for r in &records {
                assert_eq!(r.adversary.is_some(), expect_some);
                assert_eq!(r.transform.is_some(), expect_some);
                assert!(r.task.is_finite());
            }
        }
    }

    #[test]
    fn validation_ties_keep_the_earliest_epoch() {
        let train = separable_table(64, 12);
        let validation = separable_table(64, 13);
        let schedule = crate::experiments::TrainSchedule {
            downstream_epochs: 4,
            downstream_lr: 1e-12, // updates too small to flip any prediction
            batch_size: 32,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let fit = fit_heads(
            DownstreamInput::ZtOnly,
            &schedule,
            &train,
            &validation,
            &[],
            1,
            dir.path(),
        )
        .unwrap();
        assert_eq!(fit.best_epoch, 0);
    }
}
