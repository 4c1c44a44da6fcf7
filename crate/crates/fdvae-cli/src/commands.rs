//! Subcommand implementations. Every config-driven command prints the fully
//! resolved configuration (after overrides) before doing any work.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Stdio};

use fdvae::data::ImageDataset;
use fdvae::experiments::{
    evaluate_run, export_embeddings, load_repr_bundle, materialize_dataset, read_result_row,
    results_table, run_downstream_phase, run_experiment, run_repr_phase, write_results_csv,
    DownstreamInput, ExperimentConfig, ExperimentError, ResultRow, RunPaths, Variant,
    PROJECTION_FILE,
};
use fdvae::metrics::{confusion_from_records, read_prediction_log, MetricReport};
use fdvae::plot::{fairness_curves, loss_curves, projection_scatter};
use fdvae::train::{read_step_records, StepRecord, ValRecord, DOWNSTREAM_VAL_LOG, REPR_LOG};

use crate::{
    AblateArgs, Cli, CliError, Command, EvaluateArgs, ExportEmbeddingsArgs, PrepareDataArgs,
    ReportArgs, RunMatrixArgs, SplitChoice, TrainPhaseArgs,
};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let verbose = cli.verbose;
    match cli.command {
        Command::PrepareData(args) => prepare_data(args),
        Command::TrainRepr(args) => train_repr(args, verbose),
        Command::TrainDownstream(args) => train_downstream(args, verbose),
        Command::Evaluate(args) => evaluate(args),
        Command::RunMatrix(args) => run_matrix(args, verbose),
        Command::Ablate(args) => ablate(args, verbose),
        Command::ExportEmbeddings(args) => export(args),
        Command::Report(args) => report(args),
    }
}

/// `--out`, then `$FDVAE_OUTPUT_ROOT`, then `./runs`.
fn output_root(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("FDVAE_OUTPUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let config = ExperimentConfig::load(path, overrides)?;
    print_resolved(&config);
    Ok(config)
}

fn print_resolved(config: &ExperimentConfig) {
    println!("# resolved config {}", config.label());
    println!("{}", config.to_toml_string().trim_end());
    println!();
}

fn seeds_for(config: &ExperimentConfig, flag: &[u64]) -> Vec<u64> {
    if flag.is_empty() {
        config.seeds.clone()
    } else {
        flag.to_vec()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// prepare-data
// ---------------------------------------------------------------------------

fn prepare_data(args: PrepareDataArgs) -> Result<(), CliError> {
    let config = load_config(&args.config.config, &args.config.set)?;
    let splits = materialize_dataset(&config)?;

    let cell_json = |ds: &ImageDataset| {
        serde_json::json!({
            "total": ds.len(),
            "cells": {
                "t1_p1": ds.cell_count(1, 1),
                "t1_p0": ds.cell_count(1, 0),
                "t0_p1": ds.cell_count(0, 1),
                "t0_p0": ds.cell_count(0, 0),
            }
        })
    };
    let summary = serde_json::json!({
        "dataset": config.dataset_id(),
        "config": config.label(),
        "splits": {
            "train": cell_json(&splits.train),
            "validation": cell_json(&splits.validation),
            "test": cell_json(&splits.test),
        }
    });

    for (name, ds) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        println!(
            "{name}: {} samples (t1p1 {}, t1p0 {}, t0p1 {}, t0p0 {})",
            ds.len(),
            ds.cell_count(1, 1),
            ds.cell_count(1, 0),
            ds.cell_count(0, 1),
            ds.cell_count(0, 0)
        );
    }

    let dir = output_root(&args.out).join(config.label());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("dataset-summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("static json"))
        .map_err(io_err(&path))?;
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train-repr / train-downstream
// ---------------------------------------------------------------------------

fn train_repr(args: TrainPhaseArgs, verbose: u8) -> Result<(), CliError> {
    let config = load_config(&args.config.config, &args.config.set)?;
    let out = output_root(&args.out);
    let splits = materialize_dataset(&config)?;
    for seed in seeds_for(&config, &args.seed) {
        if verbose > 0 {
            println!("training representation, seed {seed}");
        }
        let artifacts = run_repr_phase(&config, &splits, seed, &out)?;
        println!("seed {seed}: wrote {}", artifacts.checkpoint_path.display());
    }
    Ok(())
}

fn train_downstream(args: TrainPhaseArgs, verbose: u8) -> Result<(), CliError> {
    let config = load_config(&args.config.config, &args.config.set)?;
    let out = output_root(&args.out);
    let splits = materialize_dataset(&config)?;
    println!("{:>6} {}", "seed", MetricReport::table_header());
    for seed in seeds_for(&config, &args.seed) {
        if verbose > 0 {
            println!("training downstream heads, seed {seed}");
        }
        let row = run_downstream_phase(&config, &splits, seed, &out)?;
        println!("{seed:>6} {}", row.metrics.table_row());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    if let Some(predictions) = &args.predictions {
        let records = read_prediction_log(predictions)?;
        let report = MetricReport::from_confusion(&confusion_from_records(&records)?)?;
        println!("samples {}", records.len());
        print_metrics(&report);
        return Ok(());
    }
    let run_dir = args.run.as_ref().expect("clap enforces --predictions|--run");
    let config_path = args
        .config
        .clone()
        .unwrap_or_else(|| RunPaths::existing(run_dir).config_file());
    let config = load_config(&config_path, &args.set)?;
    let splits = materialize_dataset(&config)?;
    let (report, predictions) = evaluate_run(&config, &splits, run_dir)?;
    println!("samples {}", predictions.len());
    print_metrics(&report);
    Ok(())
}

fn print_metrics(report: &MetricReport) {
    println!("{}", MetricReport::table_header());
    println!("{}", report.table_row());
}

// ---------------------------------------------------------------------------
// run-matrix
// ---------------------------------------------------------------------------

fn run_matrix(args: RunMatrixArgs, verbose: u8) -> Result<(), CliError> {
    if args.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let out = output_root(&args.out);
    let rows = if args.workers == 1 || args.configs.len() == 1 {
        let mut rows = Vec::new();
        for path in &args.configs {
            let config = load_config(path, &args.set)?;
            rows.extend(run_experiment(&config, &out)?);
        }
        rows
    } else {
        run_matrix_parallel(&args, &out, verbose)?
    };
    finish_table(&rows, &out.join("results.csv"))
}

/// One worker process per config, at most `workers` alive at a time. Workers
/// re-invoke this binary sequentially; the parent aggregates their persisted
/// metrics afterwards, so worker stdout is only relayed on demand.
fn run_matrix_parallel(
    args: &RunMatrixArgs,
    out: &Path,
    verbose: u8,
) -> Result<Vec<ResultRow>, CliError> {
    let mut configs = Vec::new();
    for path in &args.configs {
        configs.push((path.clone(), load_config(path, &args.set)?));
    }
    let exe = std::env::current_exe().map_err(|source| CliError::Io {
        path: "current_exe".into(),
        source,
    })?;

    for wave in configs.chunks(args.workers) {
        let mut children = Vec::new();
        for (path, _) in wave {
            let mut cmd = Process::new(&exe);
            cmd.arg("run-matrix")
                .arg("--config")
                .arg(path)
                .arg("--out")
                .arg(out)
                .arg("--workers")
                .arg("1")
                .stdout(Stdio::piped())
                .stderr(Stdio::piped());
            for spec in &args.set {
                cmd.arg("--set").arg(spec);
            }
            let child = cmd.spawn().map_err(|source| CliError::Io {
                path: exe.display().to_string(),
                source,
            })?;
            children.push((path.clone(), child));
        }
        for (path, child) in children {
            let output = child.wait_with_output().map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if !output.status.success() {
                let stderr = String::from_utf8_lossy(&output.stderr);
                return Err(CliError::Worker {
                    config: path.display().to_string(),
                    detail: stderr.lines().last().unwrap_or("no diagnostics").to_string(),
                });
            }
            if verbose > 0 {
                print!("{}", String::from_utf8_lossy(&output.stdout));
            }
            println!("finished {}", path.display());
        }
    }

    let mut rows = Vec::new();
    for (_, config) in &configs {
        for &seed in &config.seeds {
            rows.push(read_result_row(&RunPaths::new(out, config, seed).root)?);
        }
    }
    Ok(rows)
}

fn finish_table(rows: &[ResultRow], csv_path: &Path) -> Result<(), CliError> {
    let table = results_table(rows)?;
    print!("{}", table.to_text());
    write_results_csv(csv_path, &table)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// The standard ladder: start from disentanglement only, then add the
/// decorrelation classifier, the adversarial term, and finally the learned
/// residual transform in the downstream input.
const LADDER: [(&str, bool, bool, DownstreamInput); 4] = [
    ("plain", false, false, DownstreamInput::ZtOnly),
    ("cls", true, false, DownstreamInput::ZtOnly),
    ("cls-adv", true, true, DownstreamInput::ZtOnly),
    ("full", true, true, DownstreamInput::ZtPlusTransformedZm),
];

fn ablate(args: AblateArgs, verbose: u8) -> Result<(), CliError> {
    let base = load_config(&args.config.config, &args.config.set)?;
    if base.variant != Variant::Fdvae {
        return Err(CliError::Usage(format!(
            "the ablation ladder toggles fdvae loss terms; got variant {}",
            base.variant.as_str()
        )));
    }
    let out = output_root(&args.out);
    let mut rows = Vec::new();
    for (suffix, use_cls, use_adv, input) in LADDER {
        let mut config = base.clone();
        config.name = format!("{}-{suffix}", base.name);
        config.ablation.use_cls = use_cls;
        config.ablation.use_adv = use_adv;
        config.ablation.downstream_input = Some(input);
        config.validate()?;
        if verbose > 0 {
            print_resolved(&config);
        } else {
            println!("running {}", config.label());
        }
        rows.extend(run_experiment(&config, &out)?);
    }
    finish_table(&rows, &out.join("ablation-results.csv"))
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

fn export(args: ExportEmbeddingsArgs) -> Result<(), CliError> {
    let paths = RunPaths::existing(&args.run);
    let config_path = args.config.clone().unwrap_or_else(|| paths.config_file());
    let config = load_config(&config_path, &args.set)?;
    let splits = materialize_dataset(&config)?;
    let dataset = match args.split {
        SplitChoice::Train => &splits.train,
        SplitChoice::Validation => &splits.validation,
        SplitChoice::Test => &splits.test,
    };
    let bundle = load_repr_bundle(&config, &args.run)?;
    let export = export_embeddings(
        &bundle,
        dataset,
        &paths.embeddings_dir(),
        config.schedule.batch_size,
    )?;
    println!("wrote {} ({} rows)", export.embeddings_file.display(), export.rows);
    println!("wrote {}", export.projection_file.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut run_dirs = Vec::new();
    for arg in &args.runs {
        run_dirs.extend(resolve_run_dirs(arg)?);
    }
    let rows: Vec<ResultRow> = run_dirs
        .iter()
        .map(|dir| read_result_row(dir))
        .collect::<Result<_, _>>()?;
    let table = results_table(&rows)?;
    print!("{}", table.to_text());

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let text_path = args.out.join("results.txt");
    fs::write(&text_path, table.to_text()).map_err(io_err(&text_path))?;
    println!("wrote {}", text_path.display());
    let csv_path = args.out.join("results.csv");
    write_results_csv(&csv_path, &table)?;
    println!("wrote {}", csv_path.display());

    let plots_dir = args.out.join("plots");
    for dir in &run_dirs {
        write_run_plots(dir, &plots_dir)?;
    }
    Ok(())
}

/// Accept a run directory itself, or any ancestor up to two levels above
/// (experiment directory, output root); scan is sorted for determinism.
fn resolve_run_dirs(arg: &Path) -> Result<Vec<PathBuf>, CliError> {
    if arg.join("metrics.json").is_file() {
        return Ok(vec![arg.to_path_buf()]);
    }
    let mut found = Vec::new();
    for child in sorted_dirs(arg)? {
        if child.join("metrics.json").is_file() {
            found.push(child);
            continue;
        }
        for grandchild in sorted_dirs(&child)? {
            if grandchild.join("metrics.json").is_file() {
                found.push(grandchild);
            }
        }
    }
    if found.is_empty() {
        return Err(ExperimentError::MissingMetricsFile {
            path: arg.display().to_string(),
        }
        .into());
    }
    Ok(found)
}

fn sorted_dirs(parent: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(parent).map_err(io_err(parent))?;
    for entry in entries {
        let entry = entry.map_err(io_err(parent))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// `<label>-<seed-dir>` from the run directory's last two path components.
fn run_id(dir: &Path) -> String {
    let name = |p: Option<&Path>| {
        p.and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
    };
    match (name(dir.parent()), name(Some(dir))) {
        (Some(parent), Some(leaf)) => format!("{parent}-{leaf}"),
        (None, Some(leaf)) => leaf,
        _ => "run".into(),
    }
}

fn write_run_plots(run_dir: &Path, plots_dir: &Path) -> Result<(), CliError> {
    let paths = RunPaths::existing(run_dir);
    let id = run_id(run_dir);

    let repr_log = paths.logs_dir().join(REPR_LOG);
    if repr_log.is_file() {
        let records: Vec<StepRecord> = read_step_records(&repr_log)?;
        if !records.is_empty() {
            let path = plots_dir.join(format!("{id}-losses.svg"));
            loss_curves(&records).write_svg(&path)?;
            println!("wrote {}", path.display());
        }
    }

    let val_log = paths.logs_dir().join(DOWNSTREAM_VAL_LOG);
    if val_log.is_file() {
        let records: Vec<ValRecord> = read_step_records(&val_log)?;
        if !records.is_empty() {
            let path = plots_dir.join(format!("{id}-fairness.svg"));
            fairness_curves(&records).write_svg(&path)?;
            println!("wrote {}", path.display());
        }
    }

    let projection = paths.embeddings_dir().join(PROJECTION_FILE);
    if projection.is_file() {
        let rows = read_projection_rows(&projection)?;
        if !rows.is_empty() {
            let path = plots_dir.join(format!("{id}-projection.svg"));
            projection_scatter(&rows).write_svg(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Parse `(subspace, x, y)` out of a projection CSV written by the embedding
/// exporter (columns: sample_id, subspace, x, y, y_t, y_p).
fn read_projection_rows(path: &Path) -> Result<Vec<(String, f64, f64)>, CliError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (number, line) in raw.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            let tag = fields.get(1)?.to_string();
            let x = fields.get(2)?.parse().ok()?;
            let y = fields.get(3)?.parse().ok()?;
            Some((tag, x, y))
        })();
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(CliError::Artifact {
                    path: path.display().to_string(),
                    detail: format!("unparsable projection row {}", number + 1),
                })
            }
        }
    }
    Ok(rows)
}
