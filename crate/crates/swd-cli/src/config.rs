//! Flat INI-style experiment configs.
//!
//! Sections: `[experiment]`, `[dataset]`, `[model]`, `[train]`,
//! `[output]`. One `key = value` per line; `#` or `;` start comment
//! lines. Unknown sections or keys are hard errors (they are almost
//! always typos), and every message carries the offending line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use swd_core::ot::CostKind;
use swd_core::training::{DiscrepancyInput, DiscrepancyKind, TrainConfig, TrainMode};
use swd_core::{OptimizerKind, ShiftSpec};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Moons {
        n_per_class: usize,
        noise_std: f64,
        shift: ShiftSpec,
        seed: u64,
    },
    Blobs {
        centers: Vec<Vec<f64>>,
        std: f64,
        n_per_class: usize,
        shift: ShiftSpec,
        seed: u64,
    },
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
        max_samples: Option<usize>,
        seed: u64,
    },
}

/// Every knob of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetConfig,
    pub generator_widths: Vec<usize>,
    pub classifier_widths: Vec<usize>,
    pub train: TrainConfig,
    pub output_dir: Option<PathBuf>,
    pub run_source_only: bool,
    pub run_l1: bool,
    pub raster_resolution: usize,
}

struct RawConfig {
    // (section, key) -> (value, line number)
    entries: BTreeMap<(String, String), (String, usize)>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<(String, String)>>,
}

const SECTIONS: [&str; 5] = ["experiment", "dataset", "model", "train", "output"];

fn parse_raw(text: &str) -> CliResult<RawConfig> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(CliError::Config(format!(
                    "line {line_no}: unknown section [{name}]"
                )));
            }
            section = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Config(format!(
                "line {line_no}: expected `key = value`, got `{line}`"
            )));
        };
        let Some(section) = section.clone() else {
            return Err(CliError::Config(format!(
                "line {line_no}: `{key}` appears before any [section]",
                key = key.trim()
            )));
        };
        let key = key.trim().to_lowercase();
        let value = value.trim().to_string();
        if entries
            .insert((section.clone(), key.clone()), (value, line_no))
            .is_some()
        {
            return Err(CliError::Config(format!(
                "line {line_no}: duplicate key `{key}` in [{section}]"
            )));
        }
    }
    Ok(RawConfig {
        entries,
        consumed: Default::default(),
    })
}

impl RawConfig {
    fn get(&self, section: &str, key: &str) -> Option<(&str, usize)> {
        let lookup = (section.to_string(), key.to_string());
        let found = self.entries.get(&lookup).map(|(v, l)| (v.as_str(), *l));
        if found.is_some() {
            self.consumed.borrow_mut().insert(lookup);
        }
        found
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> CliResult<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|_| {
                CliError::Config(format!(
                    "line {line}: cannot parse `{value}` for {section}.{key}"
                ))
            }),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> CliResult<T> {
        Ok(self.parse(section, key)?.unwrap_or(default))
    }

    fn require(&self, section: &str, key: &str) -> CliResult<(&str, usize)> {
        self.get(section, key).ok_or_else(|| {
            CliError::Config(format!("missing required key {section}.{key}"))
        })
    }

    fn usize_list(&self, section: &str, key: &str) -> CliResult<Option<Vec<usize>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some((value, line)) => value
                .split(',')
                .map(|part| part.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    CliError::Config(format!(
                        "line {line}: {section}.{key} must be a comma-separated list of counts"
                    ))
                }),
        }
    }

    fn f64_list(&self, section: &str, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.get(section, key) {
            None => Ok(None),
            Some((value, line)) => value
                .split(',')
                .map(|part| part.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    CliError::Config(format!(
                        "line {line}: {section}.{key} must be a comma-separated list of reals"
                    ))
                }),
        }
    }

    fn keyword<T: Copy>(
        &self,
        section: &str,
        key: &str,
        table: &[(&str, T)],
        default: T,
    ) -> CliResult<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some((value, line)) => {
                let lowered = value.to_lowercase();
                table
                    .iter()
                    .find(|(name, _)| *name == lowered)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| {
                        let options: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
                        CliError::Config(format!(
                            "line {line}: {section}.{key} must be one of {} (got `{value}`)",
                            options.join("|")
                        ))
                    })
            }
        }
    }

    fn reject_unconsumed(&self) -> CliResult<()> {
        let consumed = self.consumed.borrow();
        for ((section, key), (_, line)) in &self.entries {
            if !consumed.contains(&(section.clone(), key.clone())) {
                return Err(CliError::Config(format!(
                    "line {line}: unknown key `{key}` in [{section}]"
                )));
            }
        }
        Ok(())
    }
}

fn parse_shift(raw: &RawConfig) -> CliResult<ShiftSpec> {
    let rotation = raw.parse_or("dataset", "rotation", core::f64::consts::FRAC_PI_6)?;
    let translation = raw
        .f64_list("dataset", "translation")?
        .unwrap_or_else(|| vec![0.3, 0.2]);
    ShiftSpec::new(rotation, translation).map_err(CliError::runtime)
}

fn parse_dataset(raw: &RawConfig) -> CliResult<DatasetConfig> {
    let (kind, line) = raw.require("dataset", "kind")?;
    let seed = raw.parse_or("dataset", "seed", 1001u64)?;
    match kind.to_lowercase().as_str() {
        "moons" => Ok(DatasetConfig::Moons {
            n_per_class: raw.parse_or("dataset", "n_per_class", 300usize)?,
            noise_std: raw.parse_or("dataset", "noise_std", 0.05f64)?,
            shift: parse_shift(raw)?,
            seed,
        }),
        "blobs" => {
            let centers_text = raw.require("dataset", "centers")?.0.to_string();
            let centers: Vec<Vec<f64>> = centers_text
                .split(';')
                .map(|point| {
                    point
                        .split(',')
                        .map(|c| c.trim().parse::<f64>())
                        .collect::<Result<Vec<f64>, _>>()
                })
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    CliError::Config(
                        "dataset.centers must look like `x0,y0;x1,y1` (reals)".into(),
                    )
                })?;
            Ok(DatasetConfig::Blobs {
                centers,
                std: raw.parse_or("dataset", "std", 0.3f64)?,
                n_per_class: raw.parse_or("dataset", "n_per_class", 300usize)?,
                shift: parse_shift(raw)?,
                seed,
            })
        }
        "idx" => Ok(DatasetConfig::Idx {
            source_images: PathBuf::from(raw.require("dataset", "source_images")?.0),
            source_labels: PathBuf::from(raw.require("dataset", "source_labels")?.0),
            target_images: PathBuf::from(raw.require("dataset", "target_images")?.0),
            target_labels: PathBuf::from(raw.require("dataset", "target_labels")?.0),
            max_samples: raw.parse("dataset", "max_samples")?,
            seed,
        }),
        other => Err(CliError::Config(format!(
            "line {line}: dataset.kind must be moons|blobs|idx (got `{other}`)"
        ))),
    }
}

fn parse_train(raw: &RawConfig) -> CliResult<TrainConfig> {
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        outer_iterations: raw.parse_or("train", "outer_iterations", defaults.outer_iterations)?,
        batch_size: raw.parse_or("train", "batch_size", defaults.batch_size)?,
        learning_rate: raw.parse_or("train", "learning_rate", defaults.learning_rate)?,
        optimizer: raw.keyword(
            "train",
            "optimizer",
            &[
                ("adam", OptimizerKind::Adam),
                ("sgd_momentum", OptimizerKind::SgdMomentum),
            ],
            defaults.optimizer,
        )?,
        weight_decay: raw.parse_or("train", "weight_decay", defaults.weight_decay)?,
        num_projections: raw.parse_or("train", "num_projections", defaults.num_projections)?,
        cost: raw.keyword(
            "train",
            "cost",
            &[
                ("quadratic", CostKind::Quadratic),
                ("absolute", CostKind::Absolute),
            ],
            defaults.cost,
        )?,
        reuse_projections_in_step3: raw.parse_or(
            "train",
            "reuse_projections_in_step3",
            defaults.reuse_projections_in_step3,
        )?,
        discrepancy: raw.keyword(
            "train",
            "discrepancy",
            &[("swd", DiscrepancyKind::Swd), ("l1", DiscrepancyKind::L1)],
            defaults.discrepancy,
        )?,
        discrepancy_input: raw.keyword(
            "train",
            "discrepancy_input",
            &[
                ("softmax", DiscrepancyInput::Softmax),
                ("logits", DiscrepancyInput::Logits),
            ],
            defaults.discrepancy_input,
        )?,
        mode: raw.keyword(
            "train",
            "mode",
            &[
                ("three_step", TrainMode::ThreeStep),
                ("grl", TrainMode::Grl),
            ],
            defaults.mode,
        )?,
        grl_lambda: raw.parse_or("train", "grl_lambda", defaults.grl_lambda)?,
        n_step3: raw.parse_or("train", "n_step3", defaults.n_step3)?,
        seed: raw.parse_or("train", "seed", defaults.seed)?,
    };
    config
        .validate()
        .map_err(|e| CliError::Config(format!("[train] section: {e}")))?;
    Ok(config)
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> CliResult<ExperimentConfig> {
    let raw = parse_raw(text)?;
    let name = raw
        .get("experiment", "name")
        .map(|(v, _)| v.to_string())
        .unwrap_or_else(|| "experiment".to_string());
    let dataset = parse_dataset(&raw)?;
    let generator_widths = raw
        .usize_list("model", "generator_widths")?
        .unwrap_or_else(|| vec![2, 16, 16, 16]);
    let classifier_widths = raw
        .usize_list("model", "classifier_widths")?
        .unwrap_or_else(|| vec![16, 16, 16, 2]);
    let train = parse_train(&raw)?;
    let output_dir = raw.get("output", "dir").map(|(v, _)| PathBuf::from(v));
    let run_source_only = raw.parse_or("output", "run_source_only", true)?;
    let run_l1 = raw.parse_or("output", "run_l1", false)?;
    let raster_resolution = raw.parse_or("output", "raster_resolution", 200usize)?;
    raw.reject_unconsumed()?;

    if raster_resolution < 2 {
        return Err(CliError::Config(
            "output.raster_resolution must be at least 2".into(),
        ));
    }
    let last_gen = *generator_widths.last().unwrap_or(&0);
    if classifier_widths.first() != Some(&last_gen) {
        return Err(CliError::Config(format!(
            "model widths do not chain: generator ends at {last_gen}, classifier starts at {:?}",
            classifier_widths.first()
        )));
    }

    Ok(ExperimentConfig {
        name,
        dataset,
        generator_widths,
        classifier_widths,
        train,
        output_dir,
        run_source_only,
        run_l1,
        raster_resolution,
    })
}

fn keyword_of<T: PartialEq + Copy>(value: T, table: &'static [(&'static str, T)]) -> &'static str {
    table
        .iter()
        .find(|(_, v)| *v == value)
        .map(|(name, _)| *name)
        .expect("keyword table covers every variant")
}

/// Re-serializes the effective config (after CLI overrides) so a run
/// directory records exactly what produced it.
pub fn render_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[experiment]");
    let _ = writeln!(out, "name = {}", config.name);
    let _ = writeln!(out);
    let _ = writeln!(out, "[dataset]");
    match &config.dataset {
        DatasetConfig::Moons {
            n_per_class,
            noise_std,
            shift,
            seed,
        } => {
            let _ = writeln!(out, "kind = moons");
            let _ = writeln!(out, "n_per_class = {n_per_class}");
            let _ = writeln!(out, "noise_std = {noise_std}");
            let _ = writeln!(out, "rotation = {}", shift.rotation_angle);
            let _ = writeln!(out, "translation = {}", join_reals(&shift.translation));
            let _ = writeln!(out, "seed = {seed}");
        }
        DatasetConfig::Blobs {
            centers,
            std,
            n_per_class,
            shift,
            seed,
        } => {
            let _ = writeln!(out, "kind = blobs");
            let centers_text: Vec<String> = centers.iter().map(|c| join_reals(c)).collect();
            let _ = writeln!(out, "centers = {}", centers_text.join(";"));
            let _ = writeln!(out, "std = {std}");
            let _ = writeln!(out, "n_per_class = {n_per_class}");
            let _ = writeln!(out, "rotation = {}", shift.rotation_angle);
            let _ = writeln!(out, "translation = {}", join_reals(&shift.translation));
            let _ = writeln!(out, "seed = {seed}");
        }
        DatasetConfig::Idx {
            source_images,
            source_labels,
            target_images,
            target_labels,
            max_samples,
            seed,
        } => {
            let _ = writeln!(out, "kind = idx");
            let _ = writeln!(out, "source_images = {}", source_images.display());
            let _ = writeln!(out, "source_labels = {}", source_labels.display());
            let _ = writeln!(out, "target_images = {}", target_images.display());
            let _ = writeln!(out, "target_labels = {}", target_labels.display());
            if let Some(max) = max_samples {
                let _ = writeln!(out, "max_samples = {max}");
            }
            let _ = writeln!(out, "seed = {seed}");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[model]");
    let _ = writeln!(out, "generator_widths = {}", join_counts(&config.generator_widths));
    let _ = writeln!(out, "classifier_widths = {}", join_counts(&config.classifier_widths));
    let _ = writeln!(out);
    let _ = writeln!(out, "[train]");
    let t = &config.train;
    let _ = writeln!(out, "outer_iterations = {}", t.outer_iterations);
    let _ = writeln!(out, "batch_size = {}", t.batch_size);
    let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(
        out,
        "optimizer = {}",
        keyword_of(
            t.optimizer,
            &[
                ("adam", OptimizerKind::Adam),
                ("sgd_momentum", OptimizerKind::SgdMomentum),
            ],
        )
    );
    let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
    let _ = writeln!(out, "num_projections = {}", t.num_projections);
    let _ = writeln!(
        out,
        "cost = {}",
        keyword_of(
            t.cost,
            &[
                ("quadratic", CostKind::Quadratic),
                ("absolute", CostKind::Absolute),
            ],
        )
    );
    let _ = writeln!(
        out,
        "reuse_projections_in_step3 = {}",
        t.reuse_projections_in_step3
    );
    let _ = writeln!(
        out,
        "discrepancy = {}",
        keyword_of(
            t.discrepancy,
            &[("swd", DiscrepancyKind::Swd), ("l1", DiscrepancyKind::L1)],
        )
    );
    let _ = writeln!(
        out,
        "discrepancy_input = {}",
        keyword_of(
            t.discrepancy_input,
            &[
                ("softmax", DiscrepancyInput::Softmax),
                ("logits", DiscrepancyInput::Logits),
            ],
        )
    );
    let _ = writeln!(
        out,
        "mode = {}",
        keyword_of(
            t.mode,
            &[
                ("three_step", TrainMode::ThreeStep),
                ("grl", TrainMode::Grl),
            ],
        )
    );
    let _ = writeln!(out, "grl_lambda = {}", t.grl_lambda);
    let _ = writeln!(out, "n_step3 = {}", t.n_step3);
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out);
    let _ = writeln!(out, "[output]");
    if let Some(dir) = &config.output_dir {
        let _ = writeln!(out, "dir = {}", dir.display());
    }
    let _ = writeln!(out, "run_source_only = {}", config.run_source_only);
    let _ = writeln!(out, "run_l1 = {}", config.run_l1);
    let _ = writeln!(out, "raster_resolution = {}", config.raster_resolution);
    out
}

fn join_reals(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_counts(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
