//! Iterative encode/decode refinement with mask-gated correction.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{detect_spikes, detect_steps, AnomalyMasks, DetectConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::make_covering_windows;
use crate::scalar::Scalar;
use crate::vae::ModelParams;

/// Rows per parallel inference task.
const INFER_CHUNK: usize = 256;

pub const ITERATION_LOG_HEADER: [&str; 5] =
    ["iteration", "mean_re", "mean_candidate_re", "masked_count", "max_correction"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iterations: usize,
    /// Weight of the fresh latent code when blending with the previous one.
    pub blend_alpha: f64,
    /// Per-iteration multiplier on the detection thresholds.
    pub threshold_decay: f64,
    /// Mean correction below which an early exit is allowed.
    pub tolerance: f64,
    pub early_exit: bool,
    /// Re-run the statistical detectors on each iterate.
    pub refresh_masks: bool,
    /// Stride between windows taken from each iterate.
    pub stride: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            blend_alpha: 0.5,
            threshold_decay: 0.95,
            tolerance: 1e-6,
            early_exit: false,
            refresh_masks: true,
            stride: 1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("refinement needs at least one iteration"));
        }
        if !(0.0..=1.0).contains(&self.blend_alpha) {
            return Err(Error::config("blend weight must lie in [0, 1]"));
        }
        if !(self.threshold_decay > 0.0 && self.threshold_decay <= 1.0) {
            return Err(Error::config("threshold decay must lie in (0, 1]"));
        }
        if self.stride == 0 {
            return Err(Error::config("window stride must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean `|x_k - x_{k-1}|` after gating.
    pub mean_re: f64,
    /// Mean `|candidate - x_{k-1}|` before gating.
    pub mean_candidate_re: f64,
    pub masked_count: usize,
    pub max_correction: f64,
    pub spike_threshold: f64,
    pub step_threshold: f64,
}

/// Snapshot handed to observers after each iteration.
pub struct IterationView<'a, T> {
    pub iteration: usize,
    pub previous: &'a [T],
    pub current: &'a [T],
    pub mask: &'a [bool],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome<T> {
    pub series: Vec<T>,
    /// Masks used in the last iteration.
    pub masks: AnomalyMasks,
    pub log: Vec<IterationRecord>,
}

/// Averages overlapping window values back onto the series.
pub fn windows_to_series<T: Scalar>(windows: &Matrix<T>, origins: &[usize], len: usize) -> Result<Vec<T>> {
    if windows.rows() != origins.len() {
        return Err(Error::shape(format!(
            "{} windows but {} origins",
            windows.rows(),
            origins.len()
        )));
    }
    let width = windows.cols();
    let mut sum = vec![T::zero(); len];
    let mut count = vec![0usize; len];
    for (r, &o) in origins.iter().enumerate() {
        if o + width > len {
            return Err(Error::shape(format!("window at {o} runs past the series end {len}")));
        }
        for (j, &v) in windows.row(r).iter().enumerate() {
            sum[o + j] += v;
            count[o + j] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .enumerate()
        .map(|(i, (&s, &c))| {
            if c == 0 {
                Err(Error::Coverage(i))
            } else {
                Ok(s / T::from_usize_lossy(c))
            }
        })
        .collect()
}

fn row_block<T: Scalar>(m: &Matrix<T>, start: usize, end: usize) -> Matrix<T> {
    let cols = m.cols();
    Matrix::from_vec(end - start, cols, m.as_slice()[start * cols..end * cols].to_vec())
        .expect("block bounds are within the matrix")
}

fn stack_rows<T: Scalar>(parts: Vec<Matrix<T>>, cols: usize) -> Matrix<T> {
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend(p.into_vec());
    }
    Matrix::from_vec(rows, cols, data).expect("parts share a width")
}

fn blocks(rows: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(INFER_CHUNK)
        .map(|s| (s, (s + INFER_CHUNK).min(rows)))
        .collect()
}

/// Inference-mode latent means, computed in parallel blocks in fixed order.
pub fn encode_windows<T: Scalar>(params: &ModelParams<T>, windows: &Matrix<T>) -> Result<Matrix<T>> {
    let parts = blocks(windows.rows())
        .into_par_iter()
        .map(|(s, e)| params.encode_infer(&row_block(windows, s, e)).map(|l| l.mu))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_rows(parts, params.arch.latent_dim))
}

/// Inference-mode decoding in parallel blocks.
pub fn decode_windows<T: Scalar>(params: &ModelParams<T>, z: &Matrix<T>, windows: &Matrix<T>) -> Result<Matrix<T>> {
    if z.rows() != windows.rows() {
        return Err(Error::shape("latent and window counts differ"));
    }
    let parts = blocks(windows.rows())
        .into_par_iter()
        .map(|(s, e)| params.decode_infer(&row_block(z, s, e), &row_block(windows, s, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_rows(parts, params.arch.window))
}

/// Full-series single-pass reconstruction.
pub fn reconstruct_series<T: Scalar>(params: &ModelParams<T>, x: &[T], stride: usize) -> Result<Vec<T>> {
    let batch = make_covering_windows(x, params.arch.window, stride)?;
    let z = encode_windows(params, &batch.windows)?;
    let out = decode_windows(params, &z, &batch.windows)?;
    windows_to_series(&out, &batch.origins, x.len())
}

pub fn refine<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    supplied: &AnomalyMasks,
    detect: &DetectConfig,
    config: &RefineConfig,
) -> Result<RefineOutcome<T>> {
    refine_observed(params, x, supplied, detect, config, |_| {})
}

/// [`refine`] with a callback invoked after every iteration.
pub fn refine_observed<T: Scalar>(
    params: &ModelParams<T>,
    x: &[T],
    supplied: &AnomalyMasks,
    detect: &DetectConfig,
    config: &RefineConfig,
    mut observe: impl FnMut(&IterationView<'_, T>),
) -> Result<RefineOutcome<T>> {
    config.validate()?;
    detect.validate()?;
    if supplied.len() != x.len() {
        return Err(Error::shape(format!(
            "masks cover {} samples but the series has {}",
            supplied.len(),
            x.len()
        )));
    }
    let n = x.len();
    let mut previous = x.to_vec();
    let mut prev_z: Option<Matrix<T>> = None;
    let mut log = Vec::with_capacity(config.iterations);
    let mut masks = AnomalyMasks::new(supplied.spike.clone(), supplied.step.clone(), detect.merge_gap)?;

    for k in 1..=config.iterations {
        let decay = config.threshold_decay.powi(k as i32 - 1);
        let batch = make_covering_windows(&previous, params.arch.window, config.stride)?;
        let mut z = encode_windows(params, &batch.windows).map_err(|e| at_iteration(e, k))?;
        if let Some(old) = &prev_z {
            blend_latents(&mut z, old, config.blend_alpha)?;
        }
        let decoded = decode_windows(params, &z, &batch.windows).map_err(|e| at_iteration(e, k))?;
        let candidate = windows_to_series(&decoded, &batch.origins, n)?;
        prev_z = Some(z);

        let mut spike = supplied.spike.clone();
        let mut step = supplied.step.clone();
        let spike_threshold = detect.spike_threshold * decay;
        let step_threshold = detect.step_threshold * decay;
        if config.refresh_masks {
            let tuned = DetectConfig {
                spike_threshold,
                step_threshold,
                ..*detect
            };
            if n >= tuned.spike_window {
                for (m, f) in spike.iter_mut().zip(detect_spikes(&previous, &tuned)?.mask) {
                    *m |= f;
                }
            }
            if n >= tuned.step_window {
                for (m, f) in step.iter_mut().zip(detect_steps(&previous, &tuned)?.mask) {
                    *m |= f;
                }
            }
        }
        let mask: Vec<bool> = spike.iter().zip(&step).map(|(&a, &b)| a || b).collect();

        let mut current = previous.clone();
        let (mut re_sum, mut cand_sum, mut max_corr) = (0.0, 0.0, 0.0f64);
        for i in 0..n {
            let cand_re = (candidate[i] - previous[i]).abs().to_f64_lossy();
            cand_sum += cand_re;
            if mask[i] {
                current[i] = candidate[i];
                re_sum += cand_re;
                max_corr = max_corr.max(cand_re);
            }
        }
        let record = IterationRecord {
            iteration: k,
            mean_re: re_sum / n as f64,
            mean_candidate_re: cand_sum / n as f64,
            masked_count: mask.iter().filter(|&&m| m).count(),
            max_correction: max_corr,
            spike_threshold,
            step_threshold,
        };
        observe(&IterationView {
            iteration: k,
            previous: &previous,
            current: &current,
            mask: &mask,
        });
        log.push(record);
        masks = AnomalyMasks::new(spike, step, detect.merge_gap)?;
        previous = current;
        if config.early_exit && record.mean_re < config.tolerance {
            break;
        }
    }
    Ok(RefineOutcome {
        series: previous,
        masks,
        log,
    })
}

/// `current = alpha * current + (1 - alpha) * previous`, row by row.
pub fn blend_latents<T: Scalar>(current: &mut Matrix<T>, previous: &Matrix<T>, alpha: f64) -> Result<()> {
    if current.rows() != previous.rows() || current.cols() != previous.cols() {
        return Err(Error::shape("latent codes of consecutive iterations differ in shape"));
    }
    let a = T::lit(alpha);
    let b = T::lit(1.0 - alpha);
    for (zi, &oi) in current.as_mut_slice().iter_mut().zip(previous.as_slice()) {
        *zi = a * *zi + b * oi;
    }
    Ok(())
}

fn at_iteration(err: Error, k: usize) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("refinement iteration {k}: {msg}")),
        other => other,
    }
}

pub fn write_iteration_log<W: Write>(log: &[IterationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ITERATION_LOG_HEADER)?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.mean_re),
            format!("{:e}", r.mean_candidate_re),
            r.masked_count.to_string(),
            format!("{:e}", r.max_correction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
