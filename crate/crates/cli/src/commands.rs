//! The four pipeline commands. Each takes an already validated config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use octseg::dataio::{
    load_dataset_with, preprocess_sample, read_cache, split_dataset, summarize, write_cache, DatasetSplit,
    PreprocessedSample,
};
use octseg::evalreport::{write_comparison_table, write_reports, EVAL_BATCH};
use octseg::segnet::{build_model, load_checkpoint, SegmentationModel};
use octseg::trainer::{read_csv_log, train, CSV_HEADER};
use octseg::xai::{multi_class_gradcam, overlay, overlay_file_name, statistics_csv, GradCamResult};
use octseg::visual::save_png;
use octseg::Scalar;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Precision, RunConfig};
use crate::error::{CliError, ExitCode, Stage};

/// Options of `explain` that may override the config.
#[derive(Clone, Debug, Default)]
pub struct ExplainOptions {
    pub checkpoint: Option<PathBuf>,
    pub ids: Vec<String>,
    pub layers: Vec<String>,
    pub classes: Option<String>,
}

fn create_dir(dir: &Path, code: ExitCode) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::new(code, format!("cannot create {}: {e}", dir.display())))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::new(ExitCode::Data, format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Load the raw dataset, preprocess, split and write the cache.
fn build_cache(config: &RunConfig) -> Result<DatasetSplit, CliError> {
    let raw = load_dataset_with(&config.data.path, &config.loader_options()).stage(ExitCode::Data)?;
    println!("{}", summarize(&raw));
    let samples = raw
        .iter()
        .map(|s| preprocess_sample(s, config.target_size(), config.model.architecture.num_classes))
        .collect::<octseg::Result<Vec<_>>>()
        .stage(ExitCode::Data)?;
    let split = split_dataset(samples, config.data.split_ratio, config.seed).stage(ExitCode::Data)?;
    let cache = config.cache_path();
    if let Some(dir) = cache.parent() {
        create_dir(dir, ExitCode::Data)?;
    }
    write_cache(&split, &cache).stage(ExitCode::Data)?;
    Ok(split)
}

/// Reuse the cache when it was written with the current split and shape
/// settings; rebuild it otherwise.
fn load_split(config: &RunConfig) -> Result<DatasetSplit, CliError> {
    let cache = config.cache_path();
    if cache.exists() {
        match read_cache(&cache) {
            Ok((split, h)) => {
                let (height, width) = config.target_size();
                if h.seed == config.seed
                    && h.ratio == config.data.split_ratio
                    && (h.height, h.width) == (height, width)
                    && h.num_classes == config.model.architecture.num_classes
                {
                    return Ok(split);
                }
                log::info!("cache {} was built with other settings; rebuilding", cache.display());
            }
            Err(e) => log::warn!("ignoring unreadable cache: {e}"),
        }
    }
    build_cache(config)
}

pub fn prepare(config: &RunConfig) -> Result<(), CliError> {
    let split = build_cache(config)?;
    println!(
        "split: {} training / {} validation (seed {}, ratio {})",
        split.train.len(),
        split.validation.len(),
        split.seed,
        split.ratio
    );
    println!("cache: {}", config.cache_path().display());
    Ok(())
}

pub fn train_command(config: &RunConfig) -> Result<(), CliError> {
    match config.model.precision {
        Precision::F32 => train_as::<f32>(config),
        Precision::F64 => train_as::<f64>(config),
    }
}

fn train_as<T: Scalar>(config: &RunConfig) -> Result<(), CliError> {
    let split = load_split(config)?;
    let dataset_sha256 = sha256_file(&config.cache_path())?;
    create_dir(&config.output_root, ExitCode::Training)?;
    let model = build_model::<T>(&config.model.architecture, config.seed).stage(ExitCode::Usage)?;
    log::info!(
        "training {} parameters on {} samples ({} validation)",
        model.num_parameters(),
        split.train.len(),
        split.validation.len()
    );
    let outcome = train(model, &split, &config.training_config(), &config.loss).stage(ExitCode::Training)?;

    let checkpoint = config.checkpoint_path();
    let manifest = json!({
        "seed": config.seed,
        "precision": T::DTYPE,
        "dataset": {
            "cache": config.cache_path(),
            "sha256": dataset_sha256,
            "train_samples": split.train.len(),
            "validation_samples": split.validation.len(),
        },
        "config": config,
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best.map(|b| b.0),
        "best_monitored_loss": outcome.best.map(|b| b.1),
        "stopped_early_at": outcome.stopped_at,
        "artifacts": {
            "checkpoint": checkpoint.exists().then_some(&checkpoint),
            "training_log": config.log_path(),
        },
    });
    let path = config.manifest_path();
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
        .map_err(|e| CliError::new(ExitCode::Training, format!("{}: {e}", path.display())))?;

    let log = fs::read_to_string(config.log_path())
        .map_err(|e| CliError::new(ExitCode::Training, format!("{}: {e}", config.log_path().display())))?;
    match log.lines().skip(1).last() {
        Some(row) => println!("{CSV_HEADER}\n{row}"),
        None => println!("no epochs run"),
    }
    Ok(())
}

fn load_model<T: Scalar>(config: &RunConfig, checkpoint: Option<&Path>) -> Result<SegmentationModel<T>, CliError> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| config.checkpoint_path());
    if !path.exists() {
        return Err(CliError::new(
            ExitCode::Checkpoint,
            format!("checkpoint {} not found", path.display()),
        ));
    }
    let (model, header) =
        load_checkpoint::<T>(&path, Some(&config.model.architecture)).stage(ExitCode::Checkpoint)?;
    log::info!("loaded {} (epoch {:?})", path.display(), header.epoch);
    Ok(model)
}

pub fn evaluate_command(config: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    match config.model.precision {
        Precision::F32 => evaluate_as::<f32>(config, checkpoint),
        Precision::F64 => evaluate_as::<f64>(config, checkpoint),
    }
}

fn evaluate_as<T: Scalar>(config: &RunConfig, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let model = load_model::<T>(config, checkpoint)?;
    let split = load_split(config)?;
    let history = match read_csv_log(&config.log_path()) {
        Ok(h) => Some(h),
        Err(e) => {
            log::warn!("no training curves: {e}");
            None
        }
    };
    let root = config.reports_dir();
    create_dir(&root, ExitCode::Data)?;
    let report = |dir: &Path, samples: &[PreprocessedSample], history| {
        write_reports(dir, &model, samples, &config.loss, history, EVAL_BATCH).stage(ExitCode::Data)
    };

    // The headline set is validation; a split without one reports training.
    let (headline, train_metrics) = if split.validation.is_empty() {
        (report(&root, &split.train, history.as_deref())?, None)
    } else {
        let train = report(&root.join("train"), &split.train, None)?;
        (report(&root, &split.validation, history.as_deref())?, Some(train.metrics))
    };
    let mut sets = Vec::new();
    if let Some(m) = &train_metrics {
        sets.push(("Training", m));
        sets.push(("Validation", &headline.metrics));
    } else {
        sets.push(("Training", &headline.metrics));
    }
    write_comparison_table(&root.join("comparison.csv"), &sets).stage(ExitCode::Data)?;
    let json = fs::read_to_string(&headline.metrics_json)
        .map_err(|e| CliError::new(ExitCode::Data, format!("{}: {e}", headline.metrics_json.display())))?;
    println!("{json}");
    Ok(())
}

pub fn explain_command(config: &RunConfig, options: &ExplainOptions) -> Result<(), CliError> {
    match config.model.precision {
        Precision::F32 => explain_as::<f32>(config, options),
        Precision::F64 => explain_as::<f64>(config, options),
    }
}

fn explain_as<T: Scalar>(config: &RunConfig, options: &ExplainOptions) -> Result<(), CliError> {
    let mut xai = config.xai.clone();
    if !options.layers.is_empty() {
        xai.layers = options.layers.clone();
    }
    if let Some(c) = &options.classes {
        xai.classes = crate::config::ClassesSetting::Named(c.clone());
    }
    let selection = xai.selection()?;
    selection
        .resolve(config.model.architecture.num_classes)
        .stage(ExitCode::Usage)?;

    let model = load_model::<T>(config, options.checkpoint.as_deref())?;
    for layer in &xai.layers {
        model.network().require_node(layer).stage(ExitCode::Xai)?;
    }

    let split = load_split(config)?;
    let by_id: BTreeMap<&str, &PreprocessedSample> = split
        .train
        .iter()
        .chain(&split.validation)
        .map(|s| (s.source_id.as_str(), s))
        .collect();
    let samples: Vec<&PreprocessedSample> = if options.ids.is_empty() {
        split.validation.first().or(split.train.first()).into_iter().collect()
    } else {
        options
            .ids
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    CliError::new(ExitCode::Data, format!("no sample with id `{id}` in the dataset cache"))
                })
            })
            .collect::<Result<_, _>>()?
    };

    let out = config.xai_dir();
    create_dir(&out, ExitCode::Xai)?;
    let mut rows: Vec<(&str, GradCamResult)> = Vec::new();
    for sample in &samples {
        let image = sample.image.mapv(|v| T::of(v as f64));
        for layer in &xai.layers {
            let results =
                multi_class_gradcam(&model, image.view(), layer, &selection, xai.score).stage(ExitCode::Xai)?;
            for r in results {
                let png = overlay(r.heatmap.view(), sample.image.view()).stage(ExitCode::Xai)?;
                save_png(&png, &out.join(overlay_file_name(&sample.source_id, r.class_id, layer)))
                    .stage(ExitCode::Xai)?;
                rows.push((sample.source_id.as_str(), r));
            }
        }
    }
    let table: Vec<(&str, &GradCamResult)> = rows.iter().map(|(id, r)| (*id, r)).collect();
    let stats = out.join("gradcam_stats.csv");
    let text = statistics_csv(&table);
    fs::write(&stats, &text).map_err(|e| CliError::new(ExitCode::Xai, format!("{}: {e}", stats.display())))?;
    print!("{text}");
    Ok(())
}
