//! The five subcommands. Each returns the paths it wrote.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use dartclean_core::detector::merge_segments;
use dartclean_core::metrics::{
    baseline_rolling_median, mse, project_latent, rate_of_change, residual_stats, spike_f1,
    step_recall, temporal_consistency, window_labels, write_projection_csv, ResidualStats,
};
use dartclean_core::pipeline::{
    clean_series, initial_spike_mask, write_segment_report, CleanRun,
};
use dartclean_core::preprocess::{fill_gaps, make_covering_windows, make_windows, zscore_normalize};
use dartclean_core::refiner::{encode_windows, reconstruct_series, write_iteration_log};
use dartclean_core::series_io::{
    load_checkpoint, parse_dart, read_cleaned_csv, save_checkpoint, write_cleaned_csv,
    Checkpoint, CleanedOutput, RawSeries,
};
use dartclean_core::synth::{generate, read_ground_truth_csv, LabelledSeries};
use dartclean_core::trainer::{train, TrainLog};
use dartclean_core::vae::ModelParams;
use dartclean_core::{Error, Matrix, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::*;
use crate::error::{CliError, CliResult};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Attaches the file name to errors raised while handling it.
fn at<T>(path: &Path, result: dartclean_core::Result<T>) -> CliResult<T> {
    result.map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_series(path: &Path) -> CliResult<RawSeries<f64>> {
    at(path, parse_dart(open(path)?))
}

pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    at(path, load_checkpoint(open(path)?))
}

/// Writes `series.dart` and `ground_truth.csv`.
pub fn cmd_synth(config: &CliConfig) -> CliResult<Vec<PathBuf>> {
    let spec = &config.synth;
    let truth = generate(spec)?;
    let series_path = config.paths.output.join(SERIES_FILE);
    let truth_path = config
        .paths
        .ground_truth
        .clone()
        .unwrap_or_else(|| config.paths.output.join(GROUND_TRUTH_FILE));
    truth.write_dart(create(&series_path)?, spec)?;
    truth.write_csv(create(&truth_path)?)?;
    log::info!("synthetic series of {} samples, seed {}", truth.len(), spec.seed);
    Ok(vec![series_path, truth_path])
}

/// Trains a model on the input series and writes the checkpoint and
/// `train_log.csv`. On divergence the partial log is still written.
pub fn cmd_train(config: &CliConfig) -> CliResult<Vec<PathBuf>> {
    let input = config.paths.input()?;
    let raw = read_series(input)?;
    let filled = at(input, fill_gaps(&raw))?;
    let normalized = at(input, zscore_normalize(&filled, None))?;
    let result = match config.precision {
        Precision::F32 => fit::<f32>(config, &normalized.values),
        Precision::F64 => fit::<f64>(config, &normalized.values),
    };
    let log_path = config.paths.output.join(TRAIN_LOG_FILE);
    let (params, log) = match result {
        Ok(ok) => ok,
        Err(Error::Divergence { reason, log }) => {
            log.write_csv(create(&log_path)?)?;
            return Err(Error::Divergence { reason, log }.into());
        }
        Err(source) => {
            return Err(CliError::File {
                path: input.to_path_buf(),
                source,
            })
        }
    };
    log.write_csv(create(&log_path)?)?;
    log::info!(
        "trained {} epochs, stop reason {:?}, best epoch {:?}",
        log.records.len(),
        log.stop_reason,
        log.best_epoch
    );

    let checkpoint = Checkpoint {
        params,
        stats: normalized.stats,
        hyperparameters: json!({
            "train": config.train,
            "train_stride": config.train_stride,
            "precision": config.precision,
        }),
        cadence_seconds: raw.cadence_seconds(),
    };
    let ckpt_path = config.paths.checkpoint();
    save_checkpoint(&checkpoint, create(&ckpt_path)?)?;
    Ok(vec![ckpt_path, log_path])
}

fn fit<T: Scalar>(config: &CliConfig, values: &[f64]) -> dartclean_core::Result<(ModelParams<f64>, TrainLog)> {
    let x: Vec<T> = values.iter().map(|&v| T::lit(v)).collect();
    let arch = config.model.architecture.clone();
    let batch = make_windows(&x, arch.window, config.train_stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let params = ModelParams::<T>::init(arch, config.model.skip, &mut rng)?;
    let (trained, log) = train(params, &batch.windows, &config.train)?;
    Ok((trained.cast(), log))
}

/// Runs the cleaning pipeline on the input with a trained model.
pub fn run_clean(config: &CliConfig) -> CliResult<CleanRun<f64>> {
    let input = config.paths.input()?;
    let checkpoint = read_checkpoint(&config.paths.checkpoint())?;
    let raw = read_series(input)?;
    if let (Some(model), Some(data)) = (checkpoint.cadence_seconds, raw.cadence_seconds()) {
        if model != data {
            log::warn!("model was trained at a {model} s cadence but the input has {data} s");
        }
    }
    at(input, clean_series(&checkpoint.params, &raw, Some(&checkpoint.stats), &config.clean))
}

/// Writes `cleaned.csv`, `segments.json` and `iterations.csv`.
pub fn cmd_clean(config: &CliConfig) -> CliResult<Vec<PathBuf>> {
    let run = run_clean(config)?;
    let out = &config.paths.output;
    let paths = vec![out.join(CLEANED_FILE), out.join(SEGMENTS_FILE), out.join(ITERATIONS_FILE)];
    write_cleaned_csv(&run.output, create(&paths[0])?)?;
    write_segment_report(&run.segments, config.seed, create(&paths[1])?)?;
    write_iteration_log(&run.iterations, create(&paths[2])?)?;
    log::info!(
        "{} anomaly segments, {} steps applied",
        run.segments.len(),
        run.applied_steps.len()
    );
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// Meters per minute.
    pub min: f64,
    pub max: f64,
}

/// The eight comparison metrics for one cleaning method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub mse: f64,
    /// Temporal consistency against the true clean series.
    pub tc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_spike: f64,
    pub step_recall: f64,
    pub residual: ResidualStats,
    pub rate_of_change: RateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub true_spikes: usize,
    pub true_steps: usize,
    /// Rate of change of the uncleaned input.
    pub input_rate_of_change: RateSummary,
    pub pipeline: MethodMetrics,
    pub baseline: MethodMetrics,
}

fn rate_summary(series: &[f64], cadence: f64) -> CliResult<RateSummary> {
    let r = rate_of_change(series, cadence)?;
    Ok(RateSummary { min: r.min, max: r.max })
}

fn method_metrics(
    raw: &[f64],
    cleaned: &[f64],
    spike: &[bool],
    steps: &[usize],
    truth: &LabelledSeries,
    cadence: f64,
    eval: &EvalConfig,
) -> CliResult<MethodMetrics> {
    let f1 = spike_f1(spike, &truth.spike_ranges(), eval.spike_tolerance);
    let true_steps: Vec<usize> = (0..truth.step.len()).filter(|&i| truth.step[i]).collect();
    Ok(MethodMetrics {
        mse: mse(cleaned, &truth.clean)?,
        tc: temporal_consistency(&truth.clean, cleaned)?,
        precision: f1.precision,
        recall: f1.recall,
        f1_spike: f1.f1,
        step_recall: step_recall(steps, &true_steps, eval.step_tolerance),
        residual: residual_stats(raw, cleaned, eval.residual_bound, eval.histogram_bins)?,
        rate_of_change: rate_summary(cleaned, cadence)?,
    })
}

/// Scores a pipeline output and the rolling-median baseline against labels.
/// The baseline runs on the pipeline's gap-filled input.
pub fn evaluate(output: &CleanedOutput<f64>, truth: &LabelledSeries, config: &CliConfig) -> CliResult<EvalReport> {
    let n = output.len();
    if truth.clean.len() != n {
        return Err(Error::Shape(format!(
            "ground truth has {} samples, cleaned output has {n}",
            truth.clean.len()
        ))
        .into());
    }
    let cadence = match output.timestamps.as_slice() {
        [a, b, ..] => (b - a) as f64,
        _ => return Err(Error::InsufficientData { needed: 2, got: n }.into()),
    };
    let steps: Vec<usize> = (0..n).filter(|&i| output.step[i]).collect();
    let pipeline = method_metrics(
        &output.raw,
        &output.cleaned,
        &output.spike,
        &steps,
        truth,
        cadence,
        &config.eval,
    )?;
    let (base_cleaned, base_mask) = baseline_rolling_median(&output.raw, &config.clean.detect)?;
    let baseline = method_metrics(
        &output.raw,
        &base_cleaned,
        &base_mask,
        &[],
        truth,
        cadence,
        &config.eval,
    )?;
    Ok(EvalReport {
        samples: n,
        true_spikes: merge_segments(&truth.spike, 0).len(),
        true_steps: truth.step.iter().filter(|&&s| s).count(),
        input_rate_of_change: rate_summary(&output.raw, cadence)?,
        pipeline,
        baseline,
    })
}

/// Compares `cleaned.csv` with the ground truth and writes `metrics.json`.
pub fn cmd_eval(config: &CliConfig) -> CliResult<Vec<PathBuf>> {
    let truth_path = config.paths.ground_truth()?;
    let truth = at(truth_path, read_ground_truth_csv(open(truth_path)?))?;
    let cleaned_path = config.paths.cleaned();
    let output = at(&cleaned_path, read_cleaned_csv(open(&cleaned_path)?))?;
    let report = evaluate(&output, &truth, config)?;
    let path = config.paths.output.join(METRICS_FILE);
    let mut writer = create(&path)?;
    serde_json::to_writer_pretty(&mut writer, &report).map_err(Error::from)?;
    writeln!(writer).map_err(Error::from)?;
    writer.flush().map_err(Error::from)?;
    log::info!(
        "spike F1 pipeline {:.3} baseline {:.3}",
        report.pipeline.f1_spike,
        report.baseline.f1_spike
    );
    Ok(vec![path])
}

/// Latent means of evenly spaced windows, projected to two dimensions, with
/// windows labelled by the anomaly masks of a cleaning run. Series too short
/// for step detection are labelled by the initial spike mask alone.
pub fn cmd_latent(config: &CliConfig) -> CliResult<Vec<PathBuf>> {
    let input = config.paths.input()?;
    let checkpoint = read_checkpoint(&config.paths.checkpoint())?;
    let raw = read_series(input)?;
    let params = &checkpoint.params;
    let filled = at(input, fill_gaps(&raw))?;
    let normalized = at(input, zscore_normalize(&filled, Some(checkpoint.stats)))?;
    let x = &normalized.values;
    let width = params.arch.window;
    let batch = at(input, make_covering_windows(x, width, config.latent_stride(width)))?;
    let mu: Matrix<f64> = encode_windows(params, &batch.windows)?;
    let projection = project_latent(&mu)?;

    let detect = &config.clean.detect;
    let mask: Vec<bool> = if raw.len() >= width.max(detect.step_window).max(detect.spike_window) {
        let run = clean_series(params, &raw, Some(&checkpoint.stats), &config.clean)?;
        run.output
            .spike
            .iter()
            .zip(&run.output.step)
            .map(|(&a, &b)| a || b)
            .collect()
    } else if raw.len() >= detect.spike_window {
        log::info!("series too short for step detection; labelling windows by spikes only");
        let reconstruction = reconstruct_series(params, x, config.clean.reconstruction_stride)?;
        initial_spike_mask(x, &reconstruction, detect, config.clean.spike_rule)?
    } else {
        vec![false; raw.len()]
    };
    let labels = window_labels(&batch.origins, width, &mask);
    let path = config.paths.output.join(LATENT_FILE);
    write_projection_csv(&projection, &batch.origins, &labels, create(&path)?)?;
    Ok(vec![path])
}
