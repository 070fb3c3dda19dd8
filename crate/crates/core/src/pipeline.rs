//! End-to-end cleaning: gap filling, normalization, detection, iterative
//! refinement, step handling, smoothing and conversion back to meters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detector::{
    detect_spikes, detect_steps, hybrid_score, re_threshold, reconstruction_error, AnomalyKind,
    AnomalyMasks, DetectConfig, Step,
};
use crate::error::{Error, Result};
use crate::postprocess::{
    align_steps, denormalize, gaussian_smooth, persistent_steps, validate_steps, SmoothConfig,
    StepConfig,
};
use crate::preprocess::{fill_gaps, zscore_normalize, NormStats};
use crate::refiner::{reconstruct_series, refine_observed, IterationRecord, IterationView, RefineConfig};
use crate::scalar::Scalar;
use crate::series_io::{CleanedOutput, RawSeries};
use crate::vae::ModelParams;

/// How the initial spike mask handed to refinement is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpikeRule {
    /// Rolling-median outliers of the reconstruction residual that also
    /// exceed the reconstruction-error threshold.
    #[default]
    Intersection,
    /// Rolling-median outliers of the reconstruction residual only.
    Statistical,
    /// Reconstruction-error threshold only.
    Reconstruction,
    /// Thresholded convex blend of reconstruction error and residual deviation.
    Hybrid,
}

/// Where the z-score statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    /// The statistics stored with the model, falling back to the input.
    #[default]
    Model,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanConfig {
    pub detect: DetectConfig,
    pub refine: RefineConfig,
    pub smooth: SmoothConfig,
    pub steps: StepConfig,
    pub spike_rule: SpikeRule,
    pub stats_source: StatsSource,
    /// Stride of the single-pass reconstruction used for the initial masks.
    pub reconstruction_stride: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            detect: DetectConfig::default(),
            refine: RefineConfig::default(),
            smooth: SmoothConfig::default(),
            steps: StepConfig::default(),
            spike_rule: SpikeRule::default(),
            stats_source: StatsSource::default(),
            reconstruction_stride: 1,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        self.detect.validate()?;
        self.refine.validate()?;
        self.smooth.validate()?;
        if self.reconstruction_stride == 0 {
            return Err(Error::config("reconstruction stride must be positive"));
        }
        Ok(())
    }
}

/// One merged anomaly run in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
    /// Raw value in the segment furthest from the cleaned series.
    pub peak_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanRun<T> {
    pub output: CleanedOutput<T>,
    pub segments: Vec<SegmentReport>,
    pub iterations: Vec<IterationRecord>,
    pub stats: NormStats<T>,
    /// Initial spike mask handed to refinement.
    pub initial_spikes: Vec<bool>,
    /// Step candidates from the normalized input.
    pub candidate_steps: Vec<Step>,
    /// Steps removed from the series, with normalized level changes.
    pub applied_steps: Vec<Step>,
    pub gap_mask: Vec<bool>,
    /// Refined series before step handling and smoothing, normalized.
    pub refined: Vec<T>,
}

/// Initial spike mask from a normalized series and its reconstruction.
pub fn initial_spike_mask<T: Scalar>(
    x: &[T],
    reconstruction: &[T],
    detect: &DetectConfig,
    rule: SpikeRule,
) -> Result<Vec<bool>> {
    let errors = reconstruction_error(x, reconstruction)?;
    let residual: Vec<T> = x.iter().zip(reconstruction).map(|(&a, &b)| a - b).collect();
    let statistical = || detect_spikes(&residual, detect);
    let by_error = || re_threshold(&errors, detect.kappa).map(|t| t.to_mask(x.len()));
    Ok(match rule {
        SpikeRule::Intersection => {
            let a = by_error()?;
            statistical()?
                .mask
                .into_iter()
                .zip(a)
                .map(|(s, e)| s && e)
                .collect()
        }
        SpikeRule::Statistical => statistical()?.mask,
        SpikeRule::Reconstruction => by_error()?,
        SpikeRule::Hybrid => {
            let dev = statistical()?.deviation;
            hybrid_score(&errors, &dev, detect.hybrid_alpha, detect.kappa)?.mask
        }
    })
}

pub fn clean_series<T: Scalar>(
    params: &ModelParams<T>,
    raw: &RawSeries<T>,
    model_stats: Option<&NormStats<T>>,
    config: &CleanConfig,
) -> Result<CleanRun<T>> {
    clean_series_observed(params, raw, model_stats, config, |_| {})
}

/// [`clean_series`] with a callback after every refinement iteration.
pub fn clean_series_observed<T: Scalar>(
    params: &ModelParams<T>,
    raw: &RawSeries<T>,
    model_stats: Option<&NormStats<T>>,
    config: &CleanConfig,
    observe: impl FnMut(&IterationView<'_, T>),
) -> Result<CleanRun<T>> {
    config.validate()?;
    let n = raw.len();
    let needed = params.arch.window.max(config.detect.step_window).max(config.detect.spike_window);
    if n < needed {
        return Err(Error::InsufficientData { needed, got: n });
    }
    let filled = fill_gaps(raw)?;
    let stats = match (config.stats_source, model_stats) {
        (StatsSource::Model, Some(s)) => Some(*s),
        _ => None,
    };
    let normalized = zscore_normalize(&filled, stats)?;
    let x = &normalized.values;

    let reconstruction = reconstruct_series(params, x, config.reconstruction_stride)?;
    let initial_spikes = initial_spike_mask(x, &reconstruction, &config.detect, config.spike_rule)?;
    let candidates = detect_steps(x, &config.detect)?;
    let supplied = AnomalyMasks::new(initial_spikes.clone(), candidates.mask.clone(), config.detect.merge_gap)?;

    let outcome = refine_observed(params, x, &supplied, &config.detect, &config.refine, observe)?;
    let refined = outcome.series;
    let spike_mask = outcome.masks.spike.clone();

    let candidate_indices: Vec<usize> = candidates.steps.iter().map(|s| s.index).collect();
    let mut steps: Vec<Step> = if config.steps.validate {
        validate_steps(&refined, &candidate_indices, &spike_mask, &config.detect, config.steps.spike_overlap)?.kept
    } else {
        candidates.steps.clone()
    };
    if config.steps.persistence {
        steps = persistent_steps(
            &refined,
            &steps,
            &spike_mask,
            config.steps.align_horizon,
            config.detect.step_threshold,
        )?;
    }
    let step_indices: Vec<usize> = steps.iter().map(|s| s.index).collect();
    let (aligned, applied_steps) = if config.steps.align {
        align_steps(&refined, &step_indices, config.steps.align_horizon)?
    } else {
        (refined.clone(), steps.clone())
    };

    let smoothed = gaussian_smooth(&aligned, &config.smooth)?;
    let cleaned = denormalize(&smoothed, Some(&normalized.stats))?;

    let mut step_mask = vec![false; n];
    for &i in &step_indices {
        step_mask[i] = true;
    }
    let output = CleanedOutput::new(
        raw.timestamps.clone(),
        filled.values.clone(),
        cleaned,
        spike_mask.clone(),
        step_mask.clone(),
    )?;
    let masks = AnomalyMasks::new(spike_mask, step_mask, config.detect.merge_gap)?;
    let segments = masks
        .segments
        .iter()
        .map(|seg| {
            let peak = (seg.start..=seg.end)
                .max_by(|&a, &b| {
                    let ra = output.residual[a].abs();
                    let rb = output.residual[b].abs();
                    ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(seg.start);
            SegmentReport {
                kind: seg.kind,
                start: seg.start,
                end: seg.end,
                peak_value: output.raw[peak].to_f64_lossy(),
            }
        })
        .collect();

    Ok(CleanRun {
        output,
        segments,
        iterations: outcome.log,
        stats: normalized.stats,
        initial_spikes,
        candidate_steps: candidates.steps,
        applied_steps,
        gap_mask: normalized.gap_mask,
        refined,
    })
}

#[derive(Serialize)]
struct SegmentDocument<'a> {
    seed: Option<u64>,
    segments: &'a [SegmentReport],
}

/// Writes the segment report as pretty JSON.
pub fn write_segment_report<W: Write>(segments: &[SegmentReport], seed: Option<u64>, writer: W) -> Result<()> {
    let mut writer = writer;
    serde_json::to_writer_pretty(&mut writer, &SegmentDocument { seed, segments })?;
    writeln!(writer)?;
    Ok(())
}
