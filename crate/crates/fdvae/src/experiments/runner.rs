//! Orchestration: one experiment config, run end to end per seed.
//!
//! Every (config, seed) pair owns a run directory under the output root:
//!
//! ```text
//! <root>/<name>-<hash>/seed-<seed>/
//!   config.toml      exact copy of the resolved configuration
//!   checkpoints/     repr-latest / repr-final / downstream-final
//!   logs/            repr.jsonl, downstream.jsonl, downstream-val.jsonl
//!   predictions.csv  per-test-record hard predictions
//!   metrics.json     the ResultRow for this run
//!   embeddings/      written on demand by the embedding exporter
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    compose_split, generate_synthetic, load_attribute_dataset, ImageDataset, Record, SplitSet,
};
use crate::metrics::{group_confusion, write_prediction_log, MetricReport, PredictionRecord};
use crate::model::{Checkpoint, DownstreamHeads, ModelBundle};
use crate::train::{
    embed_dataset, predict_table, select_removal_latents, train_downstream,
    train_representation, LatentTable, DOWNSTREAM_FINAL, REPR_FINAL,
};

use super::{DatasetRef, DownstreamInput, ExperimentConfig, ExperimentError, Variant};

/// Canonical locations of one run's artifacts.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    /// `<output_root>/<name>-<hash>/seed-<seed>`.
    pub fn new(output_root: &Path, config: &ExperimentConfig, seed: u64) -> Self {
        Self {
            root: output_root
                .join(config.label())
                .join(format!("seed-{seed}")),
        }
    }

    /// A run directory that already exists on disk, as produced by
    /// [`run_experiment`].
    pub fn existing(run_dir: &Path) -> Self {
        Self {
            root: run_dir.to_path_buf(),
        }
    }

    pub fn config_file(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn repr_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join(REPR_FINAL)
    }

    pub fn downstream_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join(DOWNSTREAM_FINAL)
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn predictions_file(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }

    pub fn metrics_file(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root.join("embeddings")
    }
}

/// One test-split evaluation of one (config, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// `<name>-<hash>`: identifies the config including its ablation.
    pub label: String,
    pub variant: Variant,
    pub seed: u64,
    pub dataset: String,
    pub metrics: MetricReport,
    pub wall_seconds: f64,
}

/// Build the dataset a config describes: synthetic generation, or annotated
/// records from disk (optionally recomposed into skew/balance splits).
pub fn materialize_dataset(config: &ExperimentConfig) -> Result<SplitSet, ExperimentError> {
    match config.dataset()? {
        DatasetRef::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        DatasetRef::Attribute(att) => {
            let pair = att.pair();
            match &att.composition {
                Some(spec) => {
                    // Union the native splits into one pool: with a
                    // partition file the three loads are disjoint, without
                    // one every load returns the identical full pool.
                    let mut pool: Vec<Record> = Vec::new();
                    let mut seen = std::collections::HashSet::new();
                    for split in ["train", "val", "test"] {
                        for record in load_attribute_dataset(&att.root, &pair, split)? {
                            if seen.insert(record.id.clone()) {
                                pool.push(record);
                            }
                        }
                    }
                    Ok(compose_split(&pool, spec)?)
                }
                None => Ok(SplitSet {
                    train: ImageDataset::new(load_attribute_dataset(&att.root, &pair, "train")?),
                    validation: ImageDataset::new(load_attribute_dataset(
                        &att.root, &pair, "val",
                    )?),
                    test: ImageDataset::new(load_attribute_dataset(&att.root, &pair, "test")?),
                }),
            }
        }
    }
}

/// Run every seed of `config` under `output_root`. Artifacts of completed
/// seeds stay on disk even when a later seed fails.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_root: &Path,
) -> Result<Vec<ResultRow>, ExperimentError> {
    config.validate()?;
    let splits = materialize_dataset(config)?;
    let mut rows = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        rows.push(run_single(config, &splits, seed, output_root)?);
    }
    Ok(rows)
}

/// One (config, seed) run: representation phase, downstream phase, test
/// evaluation, all artifacts written under the run directory.
pub fn run_single(
    config: &ExperimentConfig,
    splits: &SplitSet,
    seed: u64,
    output_root: &Path,
) -> Result<ResultRow, ExperimentError> {
    let paths = prepare_run_dir(config, seed, output_root)?;
    let start = Instant::now();
    let repr = train_representation(config, splits, seed, &paths.root)?;
    let downstream = train_downstream(config, &repr.bundle, splits, seed, &paths.root)?;
    persist_evaluation(config, &repr.bundle, &downstream, splits, seed, &paths, start)
}

/// Representation phase only: creates the run directory (with its config
/// copy) and trains the encoder stack, leaving checkpoints behind for
/// [`run_downstream_phase`] to pick up — possibly in another process.
pub fn run_repr_phase(
    config: &ExperimentConfig,
    splits: &SplitSet,
    seed: u64,
    output_root: &Path,
) -> Result<crate::train::ReprArtifacts, ExperimentError> {
    let paths = prepare_run_dir(config, seed, output_root)?;
    Ok(train_representation(config, splits, seed, &paths.root)?)
}

/// Downstream phase on an existing run directory: reloads the representation
/// checkpoint (provenance-checked), trains the heads, and writes the test
/// predictions and metrics. `wall_seconds` covers this phase only.
pub fn run_downstream_phase(
    config: &ExperimentConfig,
    splits: &SplitSet,
    seed: u64,
    output_root: &Path,
) -> Result<ResultRow, ExperimentError> {
    let paths = RunPaths::new(output_root, config, seed);
    let start = Instant::now();
    let bundle = load_repr_bundle(config, &paths.root)?;
    let downstream = train_downstream(config, &bundle, splits, seed, &paths.root)?;
    persist_evaluation(config, &bundle, &downstream, splits, seed, &paths, start)
}

/// Rebuild the trained representation model from a run directory's final
/// checkpoint, verifying it belongs to `config`.
pub fn load_repr_bundle(
    config: &ExperimentConfig,
    run_dir: &Path,
) -> Result<ModelBundle, ExperimentError> {
    let ckpt = Checkpoint::load(&RunPaths::existing(run_dir).repr_checkpoint())?;
    verify_provenance(config, &ckpt, "representation")?;
    let bundle = ModelBundle::new(0)?;
    bundle.load_tensors(&ckpt.tensors)?;
    Ok(bundle)
}

/// Read the persisted [`ResultRow`] of a completed run directory.
pub fn read_result_row(run_dir: &Path) -> Result<ResultRow, ExperimentError> {
    let path = RunPaths::existing(run_dir).metrics_file();
    let text = fs::read_to_string(&path).map_err(|_| ExperimentError::MissingMetricsFile {
        path: path.display().to_string(),
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn prepare_run_dir(
    config: &ExperimentConfig,
    seed: u64,
    output_root: &Path,
) -> Result<RunPaths, ExperimentError> {
    let paths = RunPaths::new(output_root, config, seed);
    fs::create_dir_all(&paths.root)
        .map_err(|e| ExperimentError::io(paths.root.display().to_string(), e))?;
    let config_file = paths.config_file();
    fs::write(&config_file, config.to_toml_string())
        .map_err(|e| ExperimentError::io(config_file.display().to_string(), e))?;
    Ok(paths)
}

/// Predict the test split, persist predictions and metrics, and return the
/// run's [`ResultRow`].
fn persist_evaluation(
    config: &ExperimentConfig,
    bundle: &ModelBundle,
    downstream: &crate::train::DownstreamArtifacts,
    splits: &SplitSet,
    seed: u64,
    paths: &RunPaths,
    start: Instant,
) -> Result<ResultRow, ExperimentError> {
    let test = embed_dataset(bundle, &splits.test, config.schedule.batch_size)?;
    let predictions = prediction_records(
        &downstream.heads,
        downstream.input,
        &test,
        &downstream.removal_dims,
        &splits.test,
        config.schedule.batch_size,
    )?;
    write_prediction_log(&paths.predictions_file(), &predictions)?;

    let preds: Vec<u8> = predictions.iter().map(|r| r.prediction).collect();
    let cm = group_confusion(&preds, &test.y_t, &test.y_p)?;
    let row = ResultRow {
        label: config.label(),
        variant: config.variant,
        seed,
        dataset: config.dataset_id(),
        metrics: MetricReport::from_confusion(&cm)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let metrics_file = paths.metrics_file();
    fs::write(&metrics_file, serde_json::to_string_pretty(&row)?)
        .map_err(|e| ExperimentError::io(metrics_file.display().to_string(), e))?;
    Ok(row)
}

/// Re-evaluate a finished run from its on-disk checkpoints. `config` must
/// hash-match the config the run was trained with (the copy in the run
/// directory always does).
pub fn evaluate_run(
    config: &ExperimentConfig,
    splits: &SplitSet,
    run_dir: &Path,
) -> Result<(MetricReport, Vec<PredictionRecord>), ExperimentError> {
    config.validate()?;
    let paths = RunPaths::existing(run_dir);
    let bundle = load_repr_bundle(config, run_dir)?;

    let input = config.downstream_input();
    let down_ckpt = Checkpoint::load(&paths.downstream_checkpoint())?;
    verify_provenance(config, &down_ckpt, "downstream")?;
    let heads = DownstreamHeads::new(0, input.task_in_dim())?;
    heads.load_tensors(&down_ckpt.tensors)?;

    // Removal dimensions are a deterministic function of the train split;
    // re-derive them rather than trusting side files.
    let removal_dims = match input.removal_k() {
        Some(k) => {
            let train = embed_dataset(&bundle, &splits.train, config.schedule.batch_size)?;
            select_removal_latents(&train.z, &train.y_p, k)?
        }
        None => Vec::new(),
    };

    let test = embed_dataset(&bundle, &splits.test, config.schedule.batch_size)?;
    let predictions = prediction_records(
        &heads,
        input,
        &test,
        &removal_dims,
        &splits.test,
        config.schedule.batch_size,
    )?;
    let preds: Vec<u8> = predictions.iter().map(|r| r.prediction).collect();
    let cm = group_confusion(&preds, &test.y_t, &test.y_p)?;
    Ok((MetricReport::from_confusion(&cm)?, predictions))
}

fn verify_provenance(
    config: &ExperimentConfig,
    checkpoint: &Checkpoint,
    phase: &str,
) -> Result<(), ExperimentError> {
    let stored: ExperimentConfig = serde_json::from_str(&checkpoint.config_json)?;
    if stored.canonical_hash() != config.canonical_hash() {
        return Err(ExperimentError::InconsistentConfig(format!(
            "{phase} checkpoint was produced by config `{}`, not `{}`",
            stored.label(),
            config.label()
        )));
    }
    Ok(())
}

/// Hard test-split predictions joined with record identities and labels.
fn prediction_records(
    heads: &DownstreamHeads,
    input: DownstreamInput,
    table: &LatentTable,
    removal_dims: &[usize],
    dataset: &ImageDataset,
    batch_size: usize,
) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let preds = predict_table(heads, input, table, removal_dims, batch_size)?;
    Ok(dataset
        .records()
        .iter()
        .zip(preds)
        .map(|(record, prediction)| PredictionRecord {
            sample_id: record.id.clone(),
            prediction,
            target: record.target,
            protected: record.protected,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CellCounts, CompositionSpec, SyntheticSpec};
    use crate::experiments::TrainSchedule;
    use image::{Rgb, RgbImage};

    fn micro_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::synthetic_template(Variant::Fdvae);
        config.name = "micro".into();
        config.seeds = vec![1, 2, 3];
        config.synthetic = Some(SyntheticSpec {
            train: 8,
            validation: 8,
            test: 8,
            rho: 0.75,
            seed: 5,
            noise: 0.1,
        });
        config.schedule = TrainSchedule {
            repr_epochs: 1,
            downstream_epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        config
    }

    #[test]
    fn synthetic_materialization_honors_counts() {
        let config = micro_config();
        let splits = materialize_dataset(&config).unwrap();
        assert_eq!(splits.train.len(), 8);
        assert_eq!(splits.validation.len(), 8);
        assert_eq!(splits.test.len(), 8);
    }

    #[test]
    fn attribute_pool_composes_into_requested_cells() {
        // Pool-mode fixture: annotations only, no partition file. 32 records
        // spread evenly over the four (target, protected) cells.
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        let mut annotations = String::from("file,smiling,male\n");
        for i in 0..32 {
            let file = format!("img{i:02}.png");
            RgbImage::from_pixel(8, 8, Rgb([i as u8 * 7, 50, 120]))
                .save(root.join("images").join(&file))
                .unwrap();
            annotations.push_str(&format!("{file},{},{}\n", i % 2, (i / 2) % 2));
        }
        std::fs::write(root.join("annotations.csv"), annotations).unwrap();

        let mut config = ExperimentConfig::synthetic_template(Variant::Fdvae);
        config.synthetic = None;
        config.attribute = Some(crate::experiments::AttributeDatasetConfig {
            root: root.to_path_buf(),
            target: "smiling".into(),
            protected: "male".into(),
            invert_target: false,
            invert_protected: false,
            composition: Some(CompositionSpec {
                train: CellCounts {
                    t1_p1: 4,
                    t1_p0: 2,
                    t0_p1: 2,
                    t0_p0: 4,
                },
                validation: CellCounts::uniform(1),
                test: CellCounts::uniform(2),
                seed: 9,
            }),
        });

        let splits = materialize_dataset(&config).unwrap();
        assert_eq!(splits.train.len(), 12);
        assert_eq!(splits.train.cell_count(1, 1), 4);
        assert_eq!(splits.train.cell_count(1, 0), 2);
        assert_eq!(splits.validation.len(), 4);
        assert_eq!(splits.test.len(), 8);
        assert_eq!(splits.test.cell_count(0, 0), 2);
    }

    #[test]
    fn three_seeds_three_rows_with_full_artifact_sets() {
        let config = micro_config();
        let out = tempfile::tempdir().unwrap();
        let rows = run_experiment(&config, out.path()).unwrap();

        assert_eq!(rows.len(), 3);
        let seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3]);
        assert!(rows.iter().all(|r| r.label == config.label()));
        assert!(rows.iter().all(|r| r.dataset == "synthetic-rho0.75"));

        for row in &rows {
            let paths = RunPaths::new(out.path(), &config, row.seed);
            for file in [
                paths.config_file(),
                paths.repr_checkpoint(),
                paths.downstream_checkpoint(),
                paths.logs_dir().join("repr.jsonl"),
                paths.logs_dir().join("downstream.jsonl"),
                paths.logs_dir().join("downstream-val.jsonl"),
                paths.predictions_file(),
                paths.metrics_file(),
            ] {
                assert!(file.exists(), "missing artifact {}", file.display());
            }
            let persisted: ResultRow = serde_json::from_str(
                &std::fs::read_to_string(paths.metrics_file()).unwrap(),
            )
            .unwrap();
            assert_eq!(persisted.metrics, row.metrics);
        }
    }

    #[test]
    fn reruns_reproduce_metrics_and_predictions_exactly() {
        let mut config = micro_config();
        config.seeds = vec![7];
        let splits = materialize_dataset(&config).unwrap();

        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let a = run_single(&config, &splits, 7, out_a.path()).unwrap();
        let b = run_single(&config, &splits, 7, out_b.path()).unwrap();
        assert_eq!(a.metrics, b.metrics);

        let read = |root: &Path| {
            std::fs::read(RunPaths::new(root, &config, 7).predictions_file()).unwrap()
        };
        assert_eq!(read(out_a.path()), read(out_b.path()));
    }

    #[test]
    fn evaluate_run_reproduces_the_training_time_evaluation() {
        let mut config = micro_config();
        config.seeds = vec![4];
        let splits = materialize_dataset(&config).unwrap();
        let out = tempfile::tempdir().unwrap();
        let row = run_single(&config, &splits, 4, out.path()).unwrap();

        let paths = RunPaths::new(out.path(), &config, 4);
        let (metrics, predictions) = evaluate_run(&config, &splits, &paths.root).unwrap();
        assert_eq!(metrics, row.metrics);
        let persisted = crate::metrics::read_prediction_log(&paths.predictions_file()).unwrap();
        assert_eq!(predictions, persisted);
    }

    #[test]
    fn split_phases_reproduce_the_single_invocation_run() {
        let mut config = micro_config();
        config.seeds = vec![9];
        let splits = materialize_dataset(&config).unwrap();

        let joint_out = tempfile::tempdir().unwrap();
        let joint = run_single(&config, &splits, 9, joint_out.path()).unwrap();

        let split_out = tempfile::tempdir().unwrap();
        run_repr_phase(&config, &splits, 9, split_out.path()).unwrap();
        let split = run_downstream_phase(&config, &splits, 9, split_out.path()).unwrap();

        assert_eq!(joint.metrics, split.metrics);
        let read = |root: &Path| {
            std::fs::read(RunPaths::new(root, &config, 9).predictions_file()).unwrap()
        };
        assert_eq!(read(joint_out.path()), read(split_out.path()));
        let row = read_result_row(&RunPaths::new(split_out.path(), &config, 9).root).unwrap();
        assert_eq!(row.metrics, split.metrics);
    }

    #[test]
    fn downstream_phase_requires_a_repr_checkpoint() {
        let mut config = micro_config();
        config.seeds = vec![1];
        let splits = materialize_dataset(&config).unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(run_downstream_phase(&config, &splits, 1, out.path()).is_err());
    }

    #[test]
    fn missing_metrics_file_is_reported_by_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_result_row(dir.path()).unwrap_err();
        assert!(matches!(err, ExperimentError::MissingMetricsFile { .. }), "{err}");
    }

    #[test]
    fn evaluate_run_rejects_a_foreign_config() {
        let mut config = micro_config();
        config.seeds = vec![2];
        let splits = materialize_dataset(&config).unwrap();
        let out = tempfile::tempdir().unwrap();
        run_single(&config, &splits, 2, out.path()).unwrap();

        let paths = RunPaths::new(out.path(), &config, 2);
        let mut foreign = config.clone();
        foreign.weights.alpha += 1.0;
        let err = evaluate_run(&foreign, &splits, &paths.root).unwrap_err();
        assert!(matches!(err, ExperimentError::InconsistentConfig(_)), "{err}");
    }
}
