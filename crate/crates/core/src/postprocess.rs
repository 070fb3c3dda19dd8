//! Smoothing, step validation and alignment, and conversion back to meters.

use serde::{Deserialize, Serialize};

use crate::detector::{mean_shift, DetectConfig, Step};
use crate::error::{Error, Result};
use crate::preprocess::NormStats;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothConfig {
    /// Number of kernel taps.
    pub window: usize,
    /// Kernel standard deviation in samples.
    pub sigma: f64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { window: 6, sigma: 1.5 }
    }
}

impl SmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) {
            return Err(Error::config("smoothing needs a positive window and sigma"));
        }
        Ok(())
    }

    /// `(offset, weight)` pairs; offsets run from `-window/2` upward and the
    /// weights sum to one.
    pub fn kernel(&self) -> Vec<(isize, f64)> {
        let first = -((self.window / 2) as isize);
        let raw: Vec<(isize, f64)> = (0..self.window as isize)
            .map(|k| {
                let o = first + k;
                (o, (-(o * o) as f64 / (2.0 * self.sigma * self.sigma)).exp())
            })
            .collect();
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        raw.into_iter().map(|(o, w)| (o, w / total)).collect()
    }
}

/// Convolves with the Gaussian kernel, renormalizing over the taps that fall inside the series.
pub fn gaussian_smooth<T: Scalar>(x: &[T], config: &SmoothConfig) -> Result<Vec<T>> {
    config.validate()?;
    if x.len() < config.window {
        return Err(Error::InsufficientData {
            needed: config.window,
            got: x.len(),
        });
    }
    let kernel: Vec<(isize, T)> = config.kernel().into_iter().map(|(o, w)| (o, T::lit(w))).collect();
    let n = x.len() as isize;
    Ok((0..n)
        .map(|i| {
            let (mut acc, mut weight) = (T::zero(), T::zero());
            for &(o, w) in &kernel {
                let j = i + o;
                if (0..n).contains(&j) {
                    acc += w * x[j as usize];
                    weight += w;
                }
            }
            acc / weight
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    /// Drop steps that no longer show a mean shift.
    pub validate: bool,
    /// Also drop steps with a spike within one spike window.
    pub spike_overlap: bool,
    /// Drop steps whose level change does not persist over `align_horizon`.
    pub persistence: bool,
    /// Shift the series after each step back onto the preceding level.
    pub align: bool,
    /// Samples on each side used to estimate a step's size when aligning.
    pub align_horizon: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            validate: true,
            spike_overlap: false,
            persistence: true,
            align: true,
            align_horizon: 1920,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepValidation {
    pub kept: Vec<Step>,
    /// Indices kept only because they are too close to an edge to re-check.
    pub unchecked: Vec<usize>,
}

/// Keeps a step when the mean shift recomputed on `x` (ignoring spike-masked
/// samples) still reaches the step threshold and, with `spike_overlap`, no
/// spike lies within one spike window of it.
pub fn validate_steps<T: Scalar>(
    x: &[T],
    steps: &[usize],
    spike_mask: &[bool],
    detect: &DetectConfig,
    spike_overlap: bool,
) -> Result<StepValidation> {
    if spike_mask.len() != x.len() {
        return Err(Error::shape("spike mask length differs from the series"));
    }
    let half = detect.step_window / 2;
    let mut kept = Vec::new();
    let mut unchecked = Vec::new();
    for &i in steps {
        if i >= x.len() {
            return Err(Error::shape(format!("step index {i} is outside the series")));
        }
        let Some(delta) = masked_mean_shift(x, spike_mask, i, half) else {
            log::warn!("step at {i} is within {half} samples of the series edge; kept unvalidated");
            unchecked.push(i);
            kept.push(Step { index: i, delta: 0.0 });
            continue;
        };
        let lo = i.saturating_sub(detect.spike_window);
        let hi = (i + detect.spike_window).min(x.len() - 1);
        let near_spike = spike_overlap && spike_mask[lo..=hi].iter().any(|&m| m);
        if delta.abs() >= detect.step_threshold && !near_spike {
            kept.push(Step { index: i, delta });
        }
    }
    Ok(StepValidation { kept, unchecked })
}

fn masked_mean_shift<T: Scalar>(x: &[T], skip: &[bool], i: usize, half: usize) -> Option<f64> {
    mean_shift(x, i, half)?;
    let mean = |range: std::ops::Range<usize>| {
        let (sum, count) = range
            .filter(|&j| !skip[j])
            .fold((0.0, 0usize), |(s, c), j| (s + x[j].to_f64_lossy(), c + 1));
        (count > 0).then(|| sum / count as f64)
    };
    Some(mean(i..i + half)? - mean(i - half..i)?)
}

/// Re-measures each candidate's level change over up to `horizon` samples
/// per side, ignoring spike-masked samples, and keeps it when the change still
/// reaches `threshold`. Candidates are taken largest first, and each window
/// stops at the steps already accepted, so short-window ripple (tidal leakage
/// into the mean shift) does not survive while real level changes do.
pub fn persistent_steps<T: Scalar>(
    x: &[T],
    candidates: &[Step],
    spike_mask: &[bool],
    horizon: usize,
    threshold: f64,
) -> Result<Vec<Step>> {
    if spike_mask.len() != x.len() {
        return Err(Error::shape("spike mask length differs from the series"));
    }
    if candidates.iter().any(|s| s.index >= x.len()) {
        return Err(Error::shape("step index is outside the series"));
    }
    let mut order = candidates.to_vec();
    order.sort_by(|a, b| b.delta.abs().total_cmp(&a.delta.abs()).then(a.index.cmp(&b.index)));
    let mut accepted: Vec<Step> = Vec::new();
    for c in order {
        let i = c.index;
        let left = accepted.iter().map(|s| s.index).filter(|&k| k < i).max().unwrap_or(0);
        let right = accepted
            .iter()
            .map(|s| s.index)
            .filter(|&k| k > i)
            .min()
            .unwrap_or(x.len());
        if accepted.iter().any(|s| s.index == i) {
            continue;
        }
        let lo = i.saturating_sub(horizon).max(left);
        let hi = (i + horizon).min(right);
        let mean = |range: std::ops::Range<usize>| {
            let (sum, count) = range
                .filter(|&j| !spike_mask[j])
                .fold((0.0, 0usize), |(s, n), j| (s + x[j].to_f64_lossy(), n + 1));
            (count > 0).then(|| sum / count as f64)
        };
        let (Some(before), Some(after)) = (mean(lo..i), mean(i..hi)) else {
            continue;
        };
        let delta = after - before;
        if delta.abs() >= threshold {
            accepted.push(Step { index: i, delta });
        }
    }
    accepted.sort_by_key(|s| s.index);
    Ok(accepted)
}

/// Removes each step's level change from every later sample. Step sizes are
/// re-estimated in order from the means on either side, each side bounded by
/// `horizon` and by the neighbouring steps.
pub fn align_steps<T: Scalar>(x: &[T], steps: &[usize], horizon: usize) -> Result<(Vec<T>, Vec<Step>)> {
    let mut sorted = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.last().is_some_and(|&i| i >= x.len()) {
        return Err(Error::shape("step index is outside the series"));
    }
    let mut out = x.to_vec();
    let mut applied = Vec::with_capacity(sorted.len());
    for (k, &i) in sorted.iter().enumerate() {
        let left_bound = if k == 0 { 0 } else { sorted[k - 1] };
        let right_bound = sorted.get(k + 1).copied().unwrap_or(x.len());
        let lo = i.saturating_sub(horizon).max(left_bound);
        let hi = (i + horizon).min(right_bound);
        if lo == i || hi == i {
            continue;
        }
        let mean = |s: &[T]| s.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / s.len() as f64;
        let delta = mean(&out[i..hi]) - mean(&out[lo..i]);
        let d = T::lit(delta);
        out[i..].iter_mut().for_each(|v| *v -= d);
        applied.push(Step { index: i, delta });
    }
    Ok((out, applied))
}

/// Maps normalized values back to meters.
pub fn denormalize<T: Scalar>(x: &[T], stats: Option<&NormStats<T>>) -> Result<Vec<T>> {
    let stats = stats.ok_or_else(|| Error::State("normalization statistics are missing".into()))?;
    Ok(x.iter().map(|&v| stats.denormalize(v)).collect())
}
