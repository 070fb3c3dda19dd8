//! JSON run configuration with dotted `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use dartclean_core::pipeline::CleanConfig;
use dartclean_core::synth::SynthSpec;
use dartclean_core::trainer::TrainConfig;
use dartclean_core::vae::{Architecture, SkipSettings};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const SERIES_FILE: &str = "series.dart";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CLEANED_FILE: &str = "cleaned.csv";
pub const SEGMENTS_FILE: &str = "segments.json";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const LATENT_FILE: &str = "latent.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Single-precision training. Checkpoints and cleaning always use f64.
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    Error,
    Warn,
    #[default]
    Info,
    Debug,
    Trace,
}

impl Verbosity {
    pub fn level(self) -> log::LevelFilter {
        match self {
            Verbosity::Error => log::LevelFilter::Error,
            Verbosity::Warn => log::LevelFilter::Warn,
            Verbosity::Info => log::LevelFilter::Info,
            Verbosity::Debug => log::LevelFilter::Debug,
            Verbosity::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// DART-format series read by train, clean and latent.
    pub input: Option<PathBuf>,
    /// Directory receiving every file a command writes.
    pub output: PathBuf,
    /// Model file; defaults to `model.json` in the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Ground-truth CSV written by `synth`, read by `eval`.
    pub ground_truth: Option<PathBuf>,
    /// Cleaned CSV read by `eval`; defaults to `cleaned.csv` in the output directory.
    pub cleaned: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            input: None,
            output: PathBuf::from("."),
            checkpoint: None,
            ground_truth: None,
            cleaned: None,
        }
    }
}

impl Paths {
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output.join("model.json"))
    }

    pub fn cleaned(&self) -> PathBuf {
        self.cleaned
            .clone()
            .unwrap_or_else(|| self.output.join(CLEANED_FILE))
    }

    pub fn input(&self) -> CliResult<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::config("paths.input is required for this command"))
    }

    pub fn ground_truth(&self) -> CliResult<&Path> {
        self.ground_truth
            .as_deref()
            .ok_or_else(|| CliError::config("paths.ground_truth is required for this command"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub skip: SkipSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Residual magnitude, in meters, counted as contained.
    pub residual_bound: f64,
    pub histogram_bins: usize,
    /// Spike matching tolerance in samples.
    pub spike_tolerance: usize,
    /// A true step counts as found if a detected step lies this close.
    pub step_tolerance: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            residual_bound: 0.5,
            histogram_bins: 20,
            spike_tolerance: dartclean_core::metrics::SPIKE_MATCH_TOLERANCE,
            step_tolerance: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// When set, replaces `synth.seed` and `train.seed`.
    pub seed: Option<u64>,
    pub verbosity: Verbosity,
    pub precision: Precision,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Stride between training windows.
    pub train_stride: usize,
    pub clean: CleanConfig,
    /// Stride between windows projected by `latent`; 0 means one window width.
    pub latent_stride: usize,
    pub synth: SynthSpec,
    pub eval: EvalConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: None,
            verbosity: Verbosity::default(),
            precision: Precision::default(),
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_stride: 1,
            clean: CleanConfig::default(),
            latent_stride: 0,
            synth: SynthSpec::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl CliConfig {
    /// Reads the optional config file, applies `key=value` overrides and the
    /// seed flag, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| CliError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override `{item}` is not key=value")))?;
            apply_override(&mut doc, key, raw)?;
        }
        let mut config: CliConfig =
            serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))?;
        if seed.is_some() {
            config.seed = seed;
        }
        if let Some(s) = config.seed {
            config.synth.seed = s;
            config.train.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.architecture.validate()?;
        self.train.validate()?;
        self.clean.validate()?;
        if self.train_stride == 0 {
            return Err(CliError::config("train_stride must be positive"));
        }
        if !(self.eval.residual_bound > 0.0) || self.eval.histogram_bins == 0 {
            return Err(CliError::config("eval bound and bin count must be positive"));
        }
        Ok(())
    }

    pub fn latent_stride(&self, window: usize) -> usize {
        if self.latent_stride == 0 {
            window
        } else {
            self.latent_stride
        }
    }
}

/// Sets `key` (dot separated) in `doc`. The value is parsed as JSON and taken
/// as a plain string if that fails.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("malformed override key `{key}`")));
    }
    let mut node = doc;
    for (depth, part) in parts.iter().enumerate() {
        let object = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut().expect("just replaced")
            }
            _ => {
                return Err(CliError::config(format!(
                    "override `{key}`: `{}` is not an object",
                    parts[..depth].join(".")
                )))
            }
        };
        if depth + 1 == parts.len() {
            object.insert((*part).to_string(), value);
            return Ok(());
        }
        node = object.entry((*part).to_string()).or_insert(Value::Null);
    }
    Ok(())
}
