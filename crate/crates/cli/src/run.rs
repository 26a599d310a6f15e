//! Resolving a run's configuration and dataset from flags, a JSON file and
//! the built-in presets.

use std::fs;
use std::path::{Path, PathBuf};

use dccgcn::graph::{generate_synthetic, load_cora_format, load_generic, make_split, Dataset, SplitSpec, SyntheticSpec};
use dccgcn::training::{Preset, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// `cora.content` and `cora.cites` in one directory.
    Cora,
    /// `features.tsv`, `labels.tsv`, `edges.tsv` and optional `split.json`.
    Generic,
}

/// Where the nodes come from. `Synthetic` means the default generator with
/// the run's seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Path { path: PathBuf, format: DatasetFormat },
    Synthetic,
}

/// Everything needed to repeat a run. Echoed into every JSON artifact and
/// accepted back through `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub data: DataSource,
    /// `None` keeps a split shipped with the dataset (or 20 per class when
    /// there is none).
    pub split: Option<SplitSpec>,
    pub train: TrainConfig,
}

/// Overrides given on the command line; `None` leaves the lower layer.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub data: Option<DataSource>,
    /// Used when neither the flags nor the config name a dataset.
    pub fallback_data: Option<DataSource>,
    pub split: Option<SplitSpec>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub m: Option<usize>,
    pub no_calibration: bool,
    pub no_aggregation: bool,
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn merge_into(base: &mut Map<String, Value>, over: &Map<String, Value>) {
    for (k, v) in over {
        base.insert(k.clone(), v.clone());
    }
}

/// Layers preset < JSON config < flags. The JSON file may be a bare
/// training config (partial objects allowed) or a full [`RunConfig`] as
/// written into an earlier run's artifacts.
pub fn resolve(config: Option<&Path>, flags: Overrides) -> Result<RunConfig, CliError> {
    let file = config.map(read_json).transpose()?;
    let file = match file {
        None => None,
        Some(Value::Object(map)) => Some(map),
        Some(_) => return Err(CliError::Usage("config must be a JSON object".into())),
    };
    let earlier: Option<RunConfig> = match &file {
        Some(map) if map.contains_key("train") => Some(
            serde_json::from_value(Value::Object(map.clone())).map_err(|e| CliError::Usage(format!("run config: {e}")))?,
        ),
        _ => None,
    };

    let preset = match (flags.preset, &earlier) {
        (Some(p), _) => p,
        (None, Some(run)) => run.preset.parse().map_err(|e: dccgcn::Error| CliError::Usage(e.to_string()))?,
        (None, None) => Preset::Cora,
    };
    let Value::Object(mut layered) = serde_json::to_value(preset.config()).expect("config serializes") else {
        unreachable!("TrainConfig serializes to an object")
    };
    if let Some(run) = &earlier {
        let Value::Object(t) = serde_json::to_value(&run.train).expect("config serializes") else { unreachable!() };
        merge_into(&mut layered, &t);
    } else if let Some(map) = &file {
        merge_into(&mut layered, map);
    }
    let mut train: TrainConfig =
        serde_json::from_value(Value::Object(layered)).map_err(|e| CliError::Usage(format!("training config: {e}")))?;
    if let Some(seed) = flags.seed {
        train.seed = seed;
    }
    if let Some(epochs) = flags.epochs {
        train.epochs = epochs;
    }
    if let Some(m) = flags.m {
        train.m = m;
    }
    train.no_calibration |= flags.no_calibration;
    train.no_aggregation |= flags.no_aggregation;
    train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let data = flags
        .data
        .or_else(|| earlier.as_ref().map(|r| r.data.clone()))
        .or(flags.fallback_data)
        .ok_or_else(|| CliError::Usage("no dataset given (--dataset)".into()))?;
    let split = flags.split.or_else(|| earlier.as_ref().and_then(|r| r.split));
    Ok(RunConfig { preset: preset.name().into(), data, split, train })
}

/// Loads the dataset and applies the split. Explicit split flags win over a
/// shipped split; the split seed is the training seed.
pub fn load_dataset(run: &RunConfig) -> Result<Dataset, CliError> {
    let seed = run.train.seed;
    let mut ds = match &run.data {
        DataSource::Path { path, format: DatasetFormat::Cora } => load_cora_format(path.join("cora.content"), path.join("cora.cites"))?,
        DataSource::Path { path, format: DatasetFormat::Generic } => load_generic(path)?,
        DataSource::Synthetic => generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() })?,
    };
    let shipped = ds.train_mask.iter().any(|&t| t);
    let spec = match (run.split, shipped) {
        (Some(spec), _) => Some(spec),
        (None, true) => None,
        (None, false) => Some(SplitSpec::PerClass(20)),
    };
    if let Some(spec) = spec {
        let split = make_split(&ds, spec, seed).map_err(|e| CliError::Usage(e.to_string()))?;
        ds.apply_split(&split)?;
    }
    Ok(ds)
}
