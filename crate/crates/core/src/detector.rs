//! Reconstruction-error, rolling-median and mean-shift anomaly detection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{population_moments, Scalar};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    /// Rolling window for spike statistics, in samples.
    pub spike_window: usize,
    /// Total span of the two adjacent step windows, in samples.
    pub step_window: usize,
    /// Spike threshold in rolling standard deviations.
    pub spike_threshold: f64,
    /// Minimum mean shift for a step, in normalized units.
    pub step_threshold: f64,
    /// Multiplier on the standard deviation for error-based thresholds.
    pub kappa: f64,
    pub hybrid_alpha: f64,
    /// Runs separated by at most this many clear samples are fused.
    pub merge_gap: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            spike_window: 48,
            step_window: 480,
            spike_threshold: 3.0,
            step_threshold: 0.05,
            kappa: 3.0,
            hybrid_alpha: 0.7,
            merge_gap: 2,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spike_window < 3 || self.step_window < 3 {
            return Err(Error::config("detection windows must span at least 3 samples"));
        }
        if !(self.spike_threshold > 0.0 && self.step_threshold > 0.0) {
            return Err(Error::config("detection thresholds must be positive"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::config("kappa must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hybrid_alpha) {
            return Err(Error::config("hybrid weight must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    Step,
}

/// Inclusive index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start <= end && start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMasks {
    pub spike: Vec<bool>,
    pub step: Vec<bool>,
    /// Merged runs of each mask, sorted by start then kind.
    pub segments: Vec<Segment>,
}

impl AnomalyMasks {
    pub fn new(spike: Vec<bool>, step: Vec<bool>, merge_gap: usize) -> Result<Self> {
        if spike.len() != step.len() {
            return Err(Error::shape("spike and step masks differ in length"));
        }
        let mut segments: Vec<Segment> = merge_segments(&spike, merge_gap)
            .into_iter()
            .map(|(start, end)| Segment {
                kind: AnomalyKind::Spike,
                start,
                end,
            })
            .chain(merge_segments(&step, merge_gap).into_iter().map(|(start, end)| Segment {
                kind: AnomalyKind::Step,
                start,
                end,
            }))
            .collect();
        segments.sort_by_key(|s| (s.start, s.kind));
        Ok(Self { spike, step, segments })
    }

    pub fn empty(len: usize) -> Self {
        Self {
            spike: vec![false; len],
            step: vec![false; len],
            segments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.spike.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spike.is_empty()
    }

    /// Union of both masks.
    pub fn combined(&self) -> Vec<bool> {
        self.spike.iter().zip(&self.step).map(|(&a, &b)| a || b).collect()
    }
}

/// `|x - x_hat|` per sample.
pub fn reconstruction_error<T: Scalar>(x: &[T], x_hat: &[T]) -> Result<Vec<T>> {
    if x.len() != x_hat.len() {
        return Err(Error::shape(format!(
            "series has {} samples but reconstruction has {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(x.iter().zip(x_hat).map(|(&a, &b)| (a - b).abs()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet<T> {
    pub threshold: T,
    /// Indices strictly above the threshold.
    pub indices: Vec<usize>,
}

impl<T> ThresholdSet<T> {
    pub fn to_mask(&self, len: usize) -> Vec<bool> {
        let mut mask = vec![false; len];
        for &i in &self.indices {
            mask[i] = true;
        }
        mask
    }
}

/// Flags values above `mean + kappa * std` (population std).
pub fn re_threshold<T: Scalar>(errors: &[T], kappa: f64) -> Result<ThresholdSet<T>> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (mean, var) = population_moments(errors);
    let threshold = mean + T::lit(kappa) * var.sqrt();
    let indices = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(ThresholdSet { threshold, indices })
}

/// Start of the length-`width` window centred on `i`, shifted to stay inside the series.
pub fn window_start(i: usize, width: usize, len: usize) -> usize {
    i.saturating_sub(width / 2).min(len - width)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingStats<T> {
    pub median: Vec<T>,
    /// Population standard deviation, floored.
    pub std: Vec<T>,
}

fn cmp<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

fn median_of_sorted<T: Scalar>(sorted: &[T]) -> T {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    }
}

/// Centred rolling median and standard deviation over windows of exactly `width` samples.
pub fn rolling_stats<T: Scalar>(x: &[T], width: usize) -> Result<RollingStats<T>> {
    if width == 0 {
        return Err(Error::config("rolling window must be positive"));
    }
    if x.len() < width {
        return Err(Error::InsufficientData {
            needed: width,
            got: x.len(),
        });
    }
    if !crate::scalar::all_finite(x) {
        return Err(Error::numeric("rolling statistics need finite input"));
    }
    let n = x.len();
    let floor = T::lit(STD_FLOOR);
    let mut median = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    let mut sorted: Vec<T> = x[..width].to_vec();
    sorted.sort_by(cmp);
    let mut current = 0;
    let mut cached = (median_of_sorted(&sorted), population_moments(&x[..width]).1.sqrt().max(floor));
    for i in 0..n {
        let start = window_start(i, width, n);
        while current < start {
            let out = x[current];
            let pos = sorted.partition_point(|v| cmp(v, &out) == Ordering::Less);
            sorted.remove(pos);
            let incoming = x[current + width];
            let pos = sorted.partition_point(|v| cmp(v, &incoming) == Ordering::Less);
            sorted.insert(pos, incoming);
            current += 1;
            cached = (
                median_of_sorted(&sorted),
                population_moments(&x[current..current + width]).1.sqrt().max(floor),
            );
        }
        median.push(cached.0);
        std.push(cached.1);
    }
    Ok(RollingStats { median, std })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeDetection<T> {
    pub mask: Vec<bool>,
    /// `|x - median| / std` per sample.
    pub deviation: Vec<T>,
}

/// Flags samples further than `spike_threshold` rolling deviations from the rolling median.
pub fn detect_spikes<T: Scalar>(x: &[T], config: &DetectConfig) -> Result<SpikeDetection<T>> {
    let stats = rolling_stats(x, config.spike_window)?;
    let deviation: Vec<T> = x
        .iter()
        .zip(stats.median.iter().zip(&stats.std))
        .map(|(&v, (&m, &s))| (v - m).abs() / s)
        .collect();
    let tau = T::lit(config.spike_threshold);
    let mask = deviation.iter().map(|&d| d > tau).collect();
    Ok(SpikeDetection { mask, deviation })
}

/// A located level shift; `delta` is right mean minus left mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub index: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDetection {
    /// True only at located step indices.
    pub mask: Vec<bool>,
    pub steps: Vec<Step>,
}

/// Signed difference of the means of the `half` samples after and before `i`.
pub fn mean_shift<T: Scalar>(x: &[T], i: usize, half: usize) -> Option<f64> {
    if half == 0 || i < half || i + half > x.len() {
        return None;
    }
    let left: f64 = x[i - half..i].iter().map(|v| v.to_f64_lossy()).sum::<f64>() / half as f64;
    let right: f64 = x[i..i + half].iter().map(|v| v.to_f64_lossy()).sum::<f64>() / half as f64;
    Some(right - left)
}

/// Adjacent-window mean comparison; each run of over-threshold indices
/// collapses to its largest shift.
pub fn detect_steps<T: Scalar>(x: &[T], config: &DetectConfig) -> Result<StepDetection> {
    let n = x.len();
    if n < config.step_window {
        return Err(Error::InsufficientData {
            needed: config.step_window,
            got: n,
        });
    }
    let half = config.step_window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0f64);
    for v in x {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v.to_f64_lossy());
    }
    let h = half as f64;
    let mut mask = vec![false; n];
    let mut steps = Vec::new();
    let mut run: Option<Step> = None;
    for i in half..=n - half {
        let left = (prefix[i] - prefix[i - half]) / h;
        let right = (prefix[i + half] - prefix[i]) / h;
        let delta = right - left;
        if delta.abs() > config.step_threshold {
            match &mut run {
                Some(best) if delta.abs() > best.delta.abs() => *best = Step { index: i, delta },
                Some(_) => {}
                None => run = Some(Step { index: i, delta }),
            }
        } else if let Some(best) = run.take() {
            steps.push(best);
        }
    }
    steps.extend(run);
    for s in &steps {
        mask[s.index] = true;
    }
    Ok(StepDetection { mask, steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridScore {
    pub score: Vec<f64>,
    pub threshold: f64,
    pub mask: Vec<bool>,
}

fn min_max_scale<T: Scalar>(values: &[T]) -> Vec<f64> {
    let v: Vec<f64> = values.iter().map(|x| x.to_f64_lossy()).collect();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / range).collect()
}

/// Weighted blend of min-max scaled reconstruction error and statistical deviation.
pub fn hybrid_score<T: Scalar>(errors: &[T], deviation: &[T], alpha: f64, kappa: f64) -> Result<HybridScore> {
    if errors.len() != deviation.len() {
        return Err(Error::shape("hybrid score components differ in length"));
    }
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let re = min_max_scale(errors);
    let stat = min_max_scale(deviation);
    let score: Vec<f64> = re.iter().zip(&stat).map(|(r, s)| alpha * r + (1.0 - alpha) * s).collect();
    let set = re_threshold(&score, kappa)?;
    Ok(HybridScore {
        mask: set.to_mask(score.len()),
        threshold: set.threshold,
        score,
    })
}

/// Maximal runs of `true`, fusing runs separated by at most `gap` clear samples.
pub fn merge_segments(mask: &[bool], gap: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        let end = i - 1;
        match out.last_mut() {
            Some(last) if start - last.1 - 1 <= gap => last.1 = end,
            _ => out.push((start, end)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn reconstruction_error_cases() {
        assert_eq!(reconstruction_error(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(reconstruction_error(&[0.5, 2.0], &[0.5, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(reconstruction_error(&[0.0], &[0.0, 1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let re = reconstruction_error(&a, &b).unwrap();
        for i in 0..100 {
            assert_eq!(re[i], (a[i] - b[i]).abs());
        }
    }

    #[test]
    fn threshold_of_constant_errors() {
        let set = re_threshold(&[0.3f64; 50], 3.0).unwrap();
        assert!((set.threshold - 0.3).abs() < 1e-15);
        assert!(set.indices.is_empty());
    }

    #[test]
    fn threshold_isolates_single_outlier() {
        let mut re = vec![0.0; 1000];
        re[417] = 1.0;
        let set = re_threshold(&re, 3.0).unwrap();
        let mean: f64 = 1.0 / 1000.0;
        let var = (999.0 * mean * mean + (1.0 - mean).powi(2)) / 1000.0;
        assert!((set.threshold - (mean + 3.0 * var.sqrt())).abs() < 1e-12);
        assert!((set.threshold - 0.0958).abs() < 1e-3);
        assert_eq!(set.indices, vec![417]);
    }

    #[test]
    fn zero_kappa_threshold_is_mean() {
        let set = re_threshold(&[1.0, 2.0, 3.0, 6.0], 0.0).unwrap();
        assert_eq!(set.threshold, 3.0);
        assert_eq!(set.indices, vec![3]);
    }

    #[test]
    fn constant_series_has_no_spikes() {
        let det = detect_spikes(&[2.5; 100], &DetectConfig::default()).unwrap();
        assert!(det.mask.iter().all(|&m| !m));
    }

    #[test]
    fn impulse_in_noise_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut x: Vec<f64> = (0..2000).map(|_| noise.sample(&mut rng)).collect();
        x[1000] += 1.0;
        let det = detect_spikes(&x, &DetectConfig::default()).unwrap();
        assert!(det.mask[1000]);
        let false_hits = det.mask.iter().enumerate().filter(|&(i, &m)| m && i != 1000).count();
        assert!(false_hits as f64 <= 0.01 * 1999.0);
    }

    #[test]
    fn short_series_is_insufficient() {
        assert!(matches!(
            detect_spikes(&[0.0; 10], &DetectConfig::default()),
            Err(Error::InsufficientData { needed: 48, got: 10 })
        ));
        assert!(matches!(
            detect_steps(&[0.0; 100], &DetectConfig::default()),
            Err(Error::InsufficientData { needed: 480, got: 100 })
        ));
    }

    #[test]
    fn rolling_stats_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random_range(-5.0..5.0)).collect();
        for width in [48, 7] {
            let stats = rolling_stats(&x, width).unwrap();
            for i in 0..x.len() {
                let start = (i as isize - (width / 2) as isize).clamp(0, (x.len() - width) as isize) as usize;
                let window = &x[start..start + width];
                let mut sorted = window.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med = if width % 2 == 1 {
                    sorted[width / 2]
                } else {
                    (sorted[width / 2 - 1] + sorted[width / 2]) / 2.0
                };
                let mean = window[0] + window.iter().map(|v| v - window[0]).sum::<f64>() / width as f64;
                let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
                assert_eq!(stats.median[i], med, "median at {i}");
                assert_eq!(stats.std[i], var.sqrt().max(1e-8), "std at {i}");
            }
        }
    }

    #[test]
    fn ideal_step_is_located_exactly() {
        let x: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { 1.0 }).collect();
        let det = detect_steps(&x, &DetectConfig::default()).unwrap();
        assert_eq!(det.steps.len(), 1);
        assert_eq!(det.steps[0].index, 500);
        assert!((det.steps[0].delta - 1.0).abs() < 1e-12);
        assert_eq!(det.mask.iter().filter(|&&m| m).count(), 1);
    }

    #[test]
    fn constant_series_has_no_steps() {
        let det = detect_steps(&[3.0; 1200], &DetectConfig::default()).unwrap();
        assert!(det.steps.is_empty());
    }

    #[test]
    fn two_noisy_steps_are_located() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let x: Vec<f64> = (0..8000)
            .map(|i| {
                let level = if i >= 2000 { 0.5 } else { 0.0 } + if i >= 5000 { -0.5 } else { 0.0 };
                level + noise.sample(&mut rng)
            })
            .collect();
        let det = detect_steps(&x, &DetectConfig::default()).unwrap();
        for truth in [2000usize, 5000] {
            assert!(det.steps.iter().any(|s| s.index.abs_diff(truth) <= 240), "missing step at {truth}");
        }
    }

    #[test]
    fn hybrid_weighting() {
        let re = [0.0, 1.0, 0.5];
        let dev = [1.0, 0.0, 0.5];
        let h = hybrid_score(&re, &dev, 0.7, 3.0).unwrap();
        assert!((h.score[1] - 0.7).abs() < 1e-15);
        assert!((h.score[0] - 0.3).abs() < 1e-15);
        let flat = hybrid_score(&re, &[2.0; 3], 0.7, 3.0).unwrap();
        assert!((flat.score[1] - 0.7).abs() < 1e-15 && flat.score[0] == 0.0);
    }

    #[test]
    fn hybrid_with_full_weight_matches_error_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let re: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(6)).collect();
        let dev: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let h = hybrid_score(&re, &dev, 1.0, 3.0).unwrap();
        let scaled = min_max_scale(&re);
        assert_eq!(h.mask, re_threshold(&scaled, 3.0).unwrap().to_mask(500));
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_segments(&[true, false, true], 1), vec![(0, 2)]);
        assert_eq!(merge_segments(&[true, false, true], 0), vec![(0, 0), (2, 2)]);
        assert_eq!(merge_segments(&[false, true, true, false, false, true], 1), vec![(1, 2), (5, 5)]);
        assert!(merge_segments(&[false; 4], 3).is_empty());
    }

    fn reference_merge(mask: &[bool], gap: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut open: Option<(usize, usize)> = None;
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                continue;
            }
            open = match open {
                Some((s, e)) if i - e - 1 <= gap => Some((s, i)),
                Some(seg) => {
                    out.push(seg);
                    Some((i, i))
                }
                None => Some((i, i)),
            };
        }
        out.extend(open);
        out
    }

    proptest! {
        #[test]
        fn merge_matches_reference(mask in proptest::collection::vec(any::<bool>(), 0..200), gap in 0usize..5) {
            prop_assert_eq!(merge_segments(&mask, gap), reference_merge(&mask, gap));
        }

        #[test]
        fn merge_without_gap_covers_mask(mask in proptest::collection::vec(any::<bool>(), 0..200)) {
            let mut covered = vec![false; mask.len()];
            for (s, e) in merge_segments(&mask, 0) {
                for c in &mut covered[s..=e] { *c = true; }
            }
            prop_assert_eq!(covered, mask);
        }

        #[test]
        fn spikes_invariant_to_shift_and_scale(
            raw in proptest::collection::vec(-512i32..512, 60..160),
            shift in -8i32..8,
            power in -3i32..4,
        ) {
            // Dyadic values keep the transformed series exactly representable.
            let x: Vec<f64> = raw.iter().map(|&v| v as f64 / 64.0).collect();
            let config = DetectConfig::default();
            let base = detect_spikes(&x, &config).unwrap().mask;
            let shifted: Vec<f64> = x.iter().map(|v| v + shift as f64).collect();
            prop_assert_eq!(&detect_spikes(&shifted, &config).unwrap().mask, &base);
            let c = 2f64.powi(power);
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            prop_assert_eq!(&detect_spikes(&scaled, &config).unwrap().mask, &base);
        }
    }
}
