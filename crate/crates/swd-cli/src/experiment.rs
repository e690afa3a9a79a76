//! Orchestration: dataset preparation, per-condition training, and the
//! artifact files each subcommand emits.

use std::path::{Path, PathBuf};

use swd_core::models::{MlpSpec, ModelBundle};
use swd_core::training::{derive_seed, DiscrepancyKind, TrainConfig};
use swd_core::{
    evaluate, gaussian_blobs, make_moons, minibatches, predict, train, train_source_only,
    LabeledDataset, StepRecord, Tensor, UnlabeledDataset,
};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::report::{fmt_real, write_csv, write_dataset_csv, write_history, write_pgm};
use crate::{bundle_io, CliError, CliResult};

// Seed stream tags for dataset generation (training has its own).
const STREAM_SOURCE_DATA: u64 = 100;
const STREAM_TARGET_DATA: u64 = 101;
const STREAM_SUBSAMPLE: u64 = 102;

/// Source/target pair plus evaluation labels for the target, when the
/// dataset kind knows them.
pub struct PreparedData {
    pub source: LabeledDataset,
    pub target: UnlabeledDataset,
    pub target_labels: Option<Vec<usize>>,
}

fn subsample(ds: &LabeledDataset, max: usize, seed: u64) -> CliResult<LabeledDataset> {
    if ds.len() <= max {
        return Ok(ds.clone());
    }
    let pick = &minibatches(ds.len(), max, seed)?[0];
    let (points, labels) = ds.batch(pick)?;
    let k = ds.class_count();
    Ok(LabeledDataset::new(points, labels, k)?)
}

pub fn prepare_data(config: &ExperimentConfig) -> CliResult<PreparedData> {
    match &config.dataset {
        DatasetConfig::Moons {
            n_per_class,
            noise_std,
            shift,
            seed,
        } => {
            let source = make_moons(*n_per_class, *noise_std, derive_seed(*seed, STREAM_SOURCE_DATA, 0))?;
            let target = make_moons(*n_per_class, *noise_std, derive_seed(*seed, STREAM_TARGET_DATA, 0))?
                .shifted(shift)?;
            Ok(PreparedData {
                source,
                target_labels: Some(target.labels().to_vec()),
                target: target.to_unlabeled(),
            })
        }
        DatasetConfig::Blobs {
            centers,
            std,
            n_per_class,
            shift,
            seed,
        } => {
            let source = gaussian_blobs(centers, *std, *n_per_class, derive_seed(*seed, STREAM_SOURCE_DATA, 0))?;
            let target = gaussian_blobs(centers, *std, *n_per_class, derive_seed(*seed, STREAM_TARGET_DATA, 0))?
                .shifted(shift)?;
            Ok(PreparedData {
                source,
                target_labels: Some(target.labels().to_vec()),
                target: target.to_unlabeled(),
            })
        }
        DatasetConfig::Idx {
            source_images,
            source_labels,
            target_images,
            target_labels,
            max_samples,
            seed,
        } => {
            let mut source = crate::idx::load_idx(source_images, source_labels)
                .map_err(CliError::runtime)?;
            let mut target = crate::idx::load_idx(target_images, target_labels)
                .map_err(CliError::runtime)?;
            if let Some(max) = max_samples {
                source = subsample(&source, *max, derive_seed(*seed, STREAM_SUBSAMPLE, 0))?;
                target = subsample(&target, *max, derive_seed(*seed, STREAM_SUBSAMPLE, 1))?;
            }
            Ok(PreparedData {
                source,
                target_labels: Some(target.labels().to_vec()),
                target: target.to_unlabeled(),
            })
        }
    }
}

/// The three experimental conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    SourceOnly,
    Swd,
    L1,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::SourceOnly => "source_only",
            Condition::Swd => "swd",
            Condition::L1 => "l1",
        }
    }
}

fn condition_train_config(base: &TrainConfig, condition: Condition) -> TrainConfig {
    let mut config = base.clone();
    config.discrepancy = match condition {
        Condition::L1 => DiscrepancyKind::L1,
        _ => DiscrepancyKind::Swd,
    };
    config
}

pub fn model_specs(config: &ExperimentConfig) -> CliResult<(MlpSpec, MlpSpec)> {
    let gspec = MlpSpec::new(config.generator_widths.clone()).map_err(CliError::runtime)?;
    let cspec = MlpSpec::new(config.classifier_widths.clone()).map_err(CliError::runtime)?;
    Ok((gspec, cspec))
}

/// Trains one condition with an explicit train config (so sweeps can
/// vary the seed and projection count).
pub fn train_condition(
    config: &ExperimentConfig,
    data: &PreparedData,
    condition: Condition,
    train_config: &TrainConfig,
) -> CliResult<(ModelBundle, Vec<StepRecord>)> {
    let (gspec, cspec) = model_specs(config)?;
    let train_config = condition_train_config(train_config, condition);
    let labels = data.target_labels.as_deref();
    let result = match condition {
        Condition::SourceOnly => train_source_only(
            &train_config,
            &gspec,
            &cspec,
            &data.source,
            &data.target,
            labels,
        )?,
        _ => train(
            &train_config,
            &gspec,
            &cspec,
            &data.source,
            &data.target,
            labels,
        )?,
    };
    Ok(result)
}

/// Class-index raster of `predict` on a regular cell-center grid,
/// row-major from (x_min, y_max) — top row first, image convention.
pub struct BoundaryRaster {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
    pub grid: Vec<usize>,
}

pub fn rasterize_boundary(
    bundle: &ModelBundle,
    x_range: (f64, f64),
    y_range: (f64, f64),
    resolution: usize,
) -> CliResult<BoundaryRaster> {
    if bundle.generator_spec().input_width() != 2 {
        return Err(CliError::Runtime(format!(
            "boundary rasters need a 2-D input model, got input width {}",
            bundle.generator_spec().input_width()
        )));
    }
    if resolution < 2 {
        return Err(CliError::Runtime("raster resolution must be at least 2".into()));
    }
    let (x_min, x_max) = x_range;
    let (y_min, y_max) = y_range;
    if !(x_min < x_max && y_min < y_max) {
        return Err(CliError::Runtime("raster ranges must be non-empty".into()));
    }
    let dx = (x_max - x_min) / resolution as f64;
    let dy = (y_max - y_min) / resolution as f64;
    let mut cells = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let y = y_max - (row as f64 + 0.5) * dy;
        for col in 0..resolution {
            let x = x_min + (col as f64 + 0.5) * dx;
            cells.push(x);
            cells.push(y);
        }
    }
    let points = Tensor::new(resolution * resolution, 2, cells)?;
    let grid = predict(bundle, &points)?;
    Ok(BoundaryRaster {
        x_range,
        y_range,
        resolution,
        grid,
    })
}

/// Emits `<stem>.pgm` (P2, maxval = class count − 1) and `<stem>.csv`
/// (x,y,class per cell) for a raster.
pub fn write_raster(dir: &Path, stem: &str, raster: &BoundaryRaster, class_count: usize) -> CliResult<()> {
    write_pgm(
        &dir.join(format!("{stem}.pgm")),
        &raster.grid,
        raster.resolution,
        class_count.saturating_sub(1),
    )?;
    let (x_min, x_max) = raster.x_range;
    let (y_min, y_max) = raster.y_range;
    let res = raster.resolution;
    let dx = (x_max - x_min) / res as f64;
    let dy = (y_max - y_min) / res as f64;
    let rows: Vec<Vec<String>> = raster
        .grid
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let row = i / res;
            let col = i % res;
            vec![
                fmt_real(x_min + (col as f64 + 0.5) * dx),
                fmt_real(y_max - (row as f64 + 0.5) * dy),
                class.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), "x,y,class", &rows)
}

/// Bounding box of source+target points with a 10% margin per axis.
fn raster_ranges(data: &PreparedData) -> ((f64, f64), (f64, f64)) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for points in [data.source.points(), data.target.points()] {
        for i in 0..points.rows() {
            let row = points.row(i);
            x_min = x_min.min(row[0]);
            x_max = x_max.max(row[0]);
            y_min = y_min.min(row[1]);
            y_max = y_max.max(row[1]);
        }
    }
    let margin_x = 0.1 * (x_max - x_min);
    let margin_y = 0.1 * (y_max - y_min);
    (
        (x_min - margin_x, x_max + margin_x),
        (y_min - margin_y, y_max + margin_y),
    )
}

/// Final accuracies of one trained condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: &'static str,
    pub source_accuracy: f64,
    pub target_accuracy: f64,
}

fn summarize(
    condition: Condition,
    bundle: &ModelBundle,
    data: &PreparedData,
) -> CliResult<ConditionSummary> {
    let source_accuracy = evaluate(bundle, &data.source)?;
    let target_accuracy = match &data.target_labels {
        Some(labels) => {
            let eval = LabeledDataset::new(
                data.target.points().clone(),
                labels.clone(),
                bundle.class_count(),
            )?;
            evaluate(bundle, &eval)?
        }
        None => f64::NAN,
    };
    Ok(ConditionSummary {
        condition: condition.name(),
        source_accuracy,
        target_accuracy,
    })
}

fn enabled_conditions(config: &ExperimentConfig) -> Vec<Condition> {
    let mut conditions = Vec::new();
    if config.run_source_only {
        conditions.push(Condition::SourceOnly);
    }
    conditions.push(Condition::Swd);
    if config.run_l1 {
        conditions.push(Condition::L1);
    }
    conditions
}

/// Runs every enabled condition and writes the run directory:
/// config echo, dataset exports, per-condition history/model/raster,
/// and `summary.csv`. Returns the summary rows.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> CliResult<Vec<ConditionSummary>> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("config_echo.cfg"),
        crate::config::render_config(config),
    )?;

    let data = prepare_data(config)?;
    write_dataset_csv(&out_dir.join("source.csv"), &data.source)?;
    if let Some(labels) = &data.target_labels {
        let target_labeled = LabeledDataset::new(
            data.target.points().clone(),
            labels.clone(),
            data.source.class_count(),
        )?;
        write_dataset_csv(&out_dir.join("target.csv"), &target_labeled)?;
    }

    let two_d = data.source.dim() == 2;
    let ranges = if two_d { Some(raster_ranges(&data)) } else { None };

    let mut summaries = Vec::new();
    for condition in enabled_conditions(config) {
        let dir = out_dir.join(condition.name());
        std::fs::create_dir_all(&dir)?;
        let (bundle, history) = train_condition(config, &data, condition, &config.train)?;
        write_history(&dir.join("history.csv"), &history)?;
        bundle_io::write_bundle(&dir.join("model.bin"), &bundle)?;
        if let Some((x_range, y_range)) = ranges {
            let raster = rasterize_boundary(&bundle, x_range, y_range, config.raster_resolution)?;
            write_raster(&dir, "boundary", &raster, bundle.class_count())?;
        }
        summaries.push(summarize(condition, &bundle, &data)?);
    }

    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.condition.to_string(),
                fmt_real(s.source_accuracy),
                fmt_real(s.target_accuracy),
            ]
        })
        .collect();
    write_csv(
        &out_dir.join("summary.csv"),
        "condition,source_accuracy,target_accuracy",
        &rows,
    )?;
    Ok(summaries)
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Trains the SWD condition for every (M, seed) cell and writes
/// `sweep.csv`: data rows `m,seed,target_accuracy` sorted by (M, seed)
/// with one aggregate row (mean, std) after each M group.
pub fn sweep_projections(
    config: &ExperimentConfig,
    out_dir: &Path,
    m_list: &[usize],
    seeds: usize,
) -> CliResult<PathBuf> {
    if m_list.is_empty() {
        return Err(CliError::Config("sweep needs a non-empty projection list".into()));
    }
    if seeds == 0 {
        return Err(CliError::Config("sweep needs at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let data = prepare_data(config)?;

    let mut sorted_ms = m_list.to_vec();
    sorted_ms.sort_unstable();
    sorted_ms.dedup();

    let mut rows: Vec<Vec<String>> = Vec::new();
    for &m in &sorted_ms {
        let mut accuracies = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let train_config = TrainConfig {
                num_projections: m,
                seed: config.train.seed + s as u64,
                ..config.train.clone()
            };
            let (bundle, _) = train_condition(config, &data, Condition::Swd, &train_config)?;
            let summary = summarize(Condition::Swd, &bundle, &data)?;
            accuracies.push(summary.target_accuracy);
            rows.push(vec![
                m.to_string(),
                train_config.seed.to_string(),
                fmt_real(summary.target_accuracy),
                String::new(),
                String::new(),
            ]);
        }
        let (mean, std) = mean_and_std(&accuracies);
        rows.push(vec![
            m.to_string(),
            String::new(),
            String::new(),
            fmt_real(mean),
            fmt_real(std),
        ]);
    }
    let path = out_dir.join("sweep.csv");
    write_csv(&path, "m,seed,target_accuracy,mean,std", &rows)?;
    Ok(path)
}

/// Runs source_only, l1, and swd on identical seeds/batches and writes
/// `ablation.csv` with per-seed and aggregate target accuracies.
pub fn compare_discrepancies(
    config: &ExperimentConfig,
    out_dir: &Path,
    seeds: usize,
) -> CliResult<PathBuf> {
    if seeds == 0 {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let data = prepare_data(config)?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for condition in [Condition::SourceOnly, Condition::L1, Condition::Swd] {
        let mut accuracies = Vec::with_capacity(seeds);
        for s in 0..seeds {
            let train_config = TrainConfig {
                seed: config.train.seed + s as u64,
                ..config.train.clone()
            };
            let (bundle, _) = train_condition(config, &data, condition, &train_config)?;
            let summary = summarize(condition, &bundle, &data)?;
            accuracies.push(summary.target_accuracy);
            rows.push(vec![
                condition.name().to_string(),
                train_config.seed.to_string(),
                fmt_real(summary.target_accuracy),
                String::new(),
                String::new(),
            ]);
        }
        let (mean, std) = mean_and_std(&accuracies);
        rows.push(vec![
            condition.name().to_string(),
            String::new(),
            String::new(),
            fmt_real(mean),
            fmt_real(std),
        ]);
    }
    let path = out_dir.join("ablation.csv");
    write_csv(&path, "condition,seed,target_accuracy,mean,std", &rows)?;
    Ok(path)
}
