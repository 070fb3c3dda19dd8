//! Evaluation metrics for cleaned series and a classical despiking baseline.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::detector::{detect_spikes, merge_segments, rolling_stats, DetectConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Default event-matching tolerance for spike scoring, in samples.
pub const SPIKE_MATCH_TOLERANCE: usize = 2;

fn check_equal_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    check_equal_len(a.len(), b.len(), "mse")?;
    if a.is_empty() {
        return Err(Error::EmptySeries);
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn rmse<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    mse(a, b).map(f64::sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted_segments: usize,
    pub matched_predicted: usize,
    pub true_events: usize,
    pub matched_true: usize,
}

/// Harmonic mean of precision and recall, zero when both are zero.
pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn within(a: (usize, usize), b: (usize, usize), tolerance: usize) -> bool {
    a.0 <= b.1 + tolerance && b.0 <= a.1 + tolerance
}

/// Scores predicted spike segments against true spike ranges (inclusive).
///
/// A predicted segment is a true positive if it lies within `tolerance`
/// samples of any true spike; a true spike is recalled if any predicted
/// segment lies within `tolerance` of it. With nothing predicted, precision
/// is 1 when there is also nothing to find and 0 otherwise; recall mirrors
/// this.
pub fn spike_f1(predicted: &[bool], truth: &[(usize, usize)], tolerance: usize) -> F1Score {
    let segments = merge_segments(predicted, 0);
    // Both lists are sorted, so a sweep finds every matching pair.
    let mut pred_hit = vec![false; segments.len()];
    let mut true_hit = vec![false; truth.len()];
    let mut sorted: Vec<(usize, (usize, usize))> = truth.iter().copied().enumerate().collect();
    sorted.sort_by_key(|&(_, r)| r);
    let mut lo = 0;
    for (p, &seg) in segments.iter().enumerate() {
        while lo < sorted.len() && sorted[lo].1 .1 + tolerance < seg.0 {
            lo += 1;
        }
        for &(t, range) in &sorted[lo..] {
            if range.0 > seg.1 + tolerance {
                break;
            }
            if within(seg, range, tolerance) {
                pred_hit[p] = true;
                true_hit[t] = true;
            }
        }
    }
    let matched_predicted = pred_hit.iter().filter(|&&h| h).count();
    let matched_true = true_hit.iter().filter(|&&h| h).count();
    let ratio = |hits: usize, total: usize, other_total: usize| {
        if total > 0 {
            hits as f64 / total as f64
        } else if other_total == 0 {
            1.0
        } else {
            0.0
        }
    };
    let precision = ratio(matched_predicted, segments.len(), truth.len());
    let recall = ratio(matched_true, truth.len(), segments.len());
    F1Score {
        precision,
        recall,
        f1: f1_from(precision, recall),
        predicted_segments: segments.len(),
        matched_predicted,
        true_events: truth.len(),
        matched_true,
    }
}

/// Fraction of true step indices with a detected step at most `tolerance`
/// samples away; 1 when there are no true steps.
pub fn step_recall(detected: &[usize], truth: &[usize], tolerance: usize) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let found = truth
        .iter()
        .filter(|&&t| detected.iter().any(|&d| d.abs_diff(t) <= tolerance))
        .count();
    found as f64 / truth.len() as f64
}

/// Pearson correlation of the first differences of two series.
pub fn temporal_consistency<T: Scalar>(x: &[T], x_hat: &[T]) -> Result<f64> {
    check_equal_len(x.len(), x_hat.len(), "temporal consistency")?;
    if x.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: x.len(),
        });
    }
    let diff = |s: &[T]| -> Vec<f64> {
        s.windows(2)
            .map(|w| w[1].to_f64_lossy() - w[0].to_f64_lossy())
            .collect()
    };
    let (a, b) = (diff(x), diff(x_hat));
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&u, &v) in a.iter().zip(&b) {
        let (du, dv) = (u - mean_a, v - mean_b);
        sab += du * dv;
        saa += du * du;
        sbb += dv * dv;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "first differences have zero variance".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub bound: f64,
    /// Share of all samples with `|residual| <= bound`.
    pub fraction_within: f64,
    /// Samples with `|residual| > 1e-12`.
    pub nonzero: usize,
    /// Share of the nonzero residuals with `|residual| <= bound`; 1 when none.
    pub nonzero_fraction_within: f64,
    /// Equal-width bins spanning `[-max_abs, max_abs]`.
    pub histogram: Vec<HistogramBin>,
}

/// Treats residuals below this as "no correction".
pub const NONZERO_RESIDUAL: f64 = 1e-12;

pub fn residual_stats<T: Scalar>(raw: &[T], cleaned: &[T], bound: f64, bins: usize) -> Result<ResidualStats> {
    check_equal_len(raw.len(), cleaned.len(), "residual stats")?;
    if raw.is_empty() {
        return Err(Error::EmptySeries);
    }
    if bins == 0 || !(bound > 0.0) {
        return Err(Error::config("residual stats need bins > 0 and a positive bound"));
    }
    let residual: Vec<f64> = raw
        .iter()
        .zip(cleaned)
        .map(|(&r, &c)| r.to_f64_lossy() - c.to_f64_lossy())
        .collect();
    let max_abs = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let within = residual.iter().filter(|r| r.abs() <= bound).count();
    let nonzero: Vec<f64> = residual
        .iter()
        .copied()
        .filter(|r| r.abs() > NONZERO_RESIDUAL)
        .collect();
    let nonzero_within = nonzero.iter().filter(|r| r.abs() <= bound).count();

    let histogram = if max_abs == 0.0 {
        vec![HistogramBin {
            lower: 0.0,
            upper: 0.0,
            count: residual.len(),
        }]
    } else {
        let width = 2.0 * max_abs / bins as f64;
        let mut counts = vec![0usize; bins];
        for r in &residual {
            let k = (((r + max_abs) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                lower: -max_abs + k as f64 * width,
                upper: -max_abs + (k + 1) as f64 * width,
                count,
            })
            .collect()
    };

    Ok(ResidualStats {
        max_abs,
        bound,
        fraction_within: within as f64 / residual.len() as f64,
        nonzero: nonzero.len(),
        nonzero_fraction_within: if nonzero.is_empty() {
            1.0
        } else {
            nonzero_within as f64 / nonzero.len() as f64
        },
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOfChange {
    /// Meters per minute between consecutive samples.
    pub per_minute: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl RateOfChange {
    pub fn max_abs(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }
}

pub fn rate_of_change<T: Scalar>(series: &[T], cadence_seconds: f64) -> Result<RateOfChange> {
    if series.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: series.len(),
        });
    }
    if !(cadence_seconds > 0.0) {
        return Err(Error::config("cadence must be positive"));
    }
    let minutes = cadence_seconds / 60.0;
    let per_minute: Vec<f64> = series
        .windows(2)
        .map(|w| (w[1].to_f64_lossy() - w[0].to_f64_lossy()) / minutes)
        .collect();
    let min = per_minute.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_minute.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RateOfChange { per_minute, min, max })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentProjection {
    /// One `[pc1, pc2]` row per window.
    pub coords: Vec<[f64; 2]>,
    /// Unit projection directions.
    pub axes: [Vec<f64>; 2],
    /// Sample-covariance eigenvalues along the two axes.
    pub variances: [f64; 2],
    /// True when the covariance had rank below two and the first two
    /// coordinate axes were used instead.
    pub fallback: bool,
}

/// Relative eigenvalue below which a direction counts as empty.
const RANK_TOLERANCE: f64 = 1e-12;

/// Projects each row of `mu` onto the top two principal components of the
/// sample covariance.
pub fn project_latent<T: Scalar>(mu: &Matrix<T>) -> Result<LatentProjection> {
    let (n, d) = (mu.rows(), mu.cols());
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if d < 2 {
        return Err(Error::shape("latent projection needs at least two dimensions"));
    }
    let data = DMatrix::from_fn(n, d, |i, j| mu.get(i, j).to_f64_lossy());
    let mean = data.row_mean();
    let mut centered = data;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let second = eig.eigenvalues[order[1]];
    let scale = top.abs().max(f64::MIN_POSITIVE);
    let fallback = !(second > RANK_TOLERANCE * scale) || top <= 0.0;

    let axes: [Vec<f64>; 2] = if fallback {
        log::warn!("latent covariance has rank below two; projecting onto the first two coordinates");
        let mut e0 = vec![0.0; d];
        let mut e1 = vec![0.0; d];
        e0[0] = 1.0;
        e1[1] = 1.0;
        [e0, e1]
    } else {
        let column = |k: usize| eig.eigenvectors.column(order[k]).iter().copied().collect();
        [column(0), column(1)]
    };
    let coords: Vec<[f64; 2]> = centered
        .row_iter()
        .map(|row| {
            let dot = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect();
    let variances = if fallback {
        let var = |k: usize| coords.iter().map(|c| c[k] * c[k]).sum::<f64>() / (n as f64 - 1.0);
        [var(0), var(1)]
    } else {
        [top, second]
    };
    Ok(LatentProjection {
        coords,
        axes,
        variances,
        fallback,
    })
}

/// Marks each window as anomalous if it overlaps any masked sample.
pub fn window_labels(origins: &[usize], width: usize, mask: &[bool]) -> Vec<bool> {
    let mut prefix = vec![0usize; mask.len() + 1];
    for (i, &m) in mask.iter().enumerate() {
        prefix[i + 1] = prefix[i] + usize::from(m);
    }
    origins
        .iter()
        .map(|&o| {
            let end = (o + width).min(mask.len());
            o < end && prefix[end] > prefix[o]
        })
        .collect()
}

/// Writes `window_origin,pc1,pc2,is_anomalous`.
pub fn write_projection_csv<W: Write>(
    projection: &LatentProjection,
    origins: &[usize],
    labels: &[bool],
    writer: W,
) -> Result<()> {
    if origins.len() != projection.coords.len() || labels.len() != origins.len() {
        return Err(Error::shape("projection, origins and labels must align"));
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["window_origin", "pc1", "pc2", "is_anomalous"])?;
    for (k, c) in projection.coords.iter().enumerate() {
        csv.write_record([
            origins[k].to_string(),
            format!("{:.9}", c[0]),
            format!("{:.9}", c[1]),
            u8::from(labels[k]).to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Classical despiker: samples flagged by the rolling-median spike rule are
/// replaced by their rolling median. Steps are left alone.
pub fn baseline_rolling_median<T: Scalar>(x: &[T], config: &DetectConfig) -> Result<(Vec<T>, Vec<bool>)> {
    if x.len() < config.spike_window {
        return Err(Error::InsufficientData {
            needed: config.spike_window,
            got: x.len(),
        });
    }
    let spikes = detect_spikes(x, config)?;
    let stats = rolling_stats(x, config.spike_window)?;
    let cleaned = x
        .iter()
        .zip(&spikes.mask)
        .zip(&stats.median)
        .map(|((&v, &m), &med)| if m { med } else { v })
        .collect();
    Ok((cleaned, spikes.mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn step_recall_counts_matches_within_tolerance() {
        assert_eq!(step_recall(&[], &[], 5), 1.0);
        assert_eq!(step_recall(&[], &[100], 5), 0.0);
        assert_eq!(step_recall(&[104, 900], &[100, 300], 5), 0.5);
        assert_eq!(step_recall(&[94], &[100], 5), 0.0);
    }

    fn brute_force_counts(predicted: &[bool], truth: &[(usize, usize)], tol: usize) -> (usize, usize, usize) {
        // Segments found by a plain scan, matched by checking every pair of
        // samples.
        let mut segments = Vec::new();
        let mut i = 0;
        while i < predicted.len() {
            if predicted[i] {
                let s = i;
                while i < predicted.len() && predicted[i] {
                    i += 1;
                }
                segments.push((s, i - 1));
            } else {
                i += 1;
            }
        }
        let close = |a: (usize, usize), b: (usize, usize)| {
            (a.0..=a.1).any(|p| (b.0..=b.1).any(|q| p.abs_diff(q) <= tol))
        };
        let matched_pred = segments
            .iter()
            .filter(|&&s| truth.iter().any(|&t| close(s, t)))
            .count();
        let matched_true = truth
            .iter()
            .filter(|&&t| segments.iter().any(|&s| close(s, t)))
            .count();
        (segments.len(), matched_pred, matched_true)
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let mut mask = vec![false; 100];
        mask[10] = true;
        mask[50..53].iter_mut().for_each(|m| *m = true);
        let score = spike_f1(&mask, &[(10, 10), (50, 52)], 2);
        assert_eq!((score.precision, score.recall, score.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn half_recall_gives_two_thirds() {
        let mut mask = vec![false; 100];
        mask[10] = true;
        let score = spike_f1(&mask, &[(10, 10), (60, 60)], 2);
        assert_eq!(score.precision, 1.0);
        assert_eq!(score.recall, 0.5);
        assert!((score.f1 - 2.0 * 0.5 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn tolerance_bounds_matching() {
        let mut mask = vec![false; 100];
        mask[13] = true;
        assert_eq!(spike_f1(&mask, &[(10, 11)], 2).f1, 1.0);
        assert_eq!(spike_f1(&mask, &[(10, 10)], 2).f1, 0.0);
    }

    #[test]
    fn empty_conventions() {
        let none = vec![false; 20];
        assert_eq!(spike_f1(&none, &[], 2).f1, 1.0);
        assert_eq!(spike_f1(&none, &[(3, 3)], 2).f1, 0.0);
        let mut one = none.clone();
        one[4] = true;
        assert_eq!(spike_f1(&one, &[], 2).f1, 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = 300;
            let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
            let mut truth = Vec::new();
            let mut pos = rng.random_range(0..10);
            while pos < n - 3 {
                let width = rng.random_range(1..=3);
                truth.push((pos, pos + width - 1));
                pos += width + rng.random_range(1..40);
            }
            let tol = rng.random_range(0..4);
            let score = spike_f1(&mask, &truth, tol);
            let (segments, mp, mt) = brute_force_counts(&mask, &truth, tol);
            assert_eq!(score.predicted_segments, segments);
            assert_eq!(score.matched_predicted, mp);
            assert_eq!(score.matched_true, mt);
        }
    }

    proptest! {
        #[test]
        fn f1_is_symmetric_and_bounded(p in 0.0f64..=1.0, r in 0.0f64..=1.0) {
            let f = f1_from(p, r);
            prop_assert_eq!(f, f1_from(r, p));
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn tc_ignores_constant_offsets(seed in 0u64..1000, c in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            let y: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let a = temporal_consistency(&x, &y).unwrap();
            let b = temporal_consistency(&x, &shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tc_of_identity_and_negation() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((temporal_consistency(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((temporal_consistency(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tc_matches_covariance_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..500).map(|_| rng.random()).collect();
        // Oracle: cov / (sd·sd) with the n−1 convention throughout.
        let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
        let m = dx.len() as f64;
        let (mx, my) = (dx.iter().sum::<f64>() / m, dy.iter().sum::<f64>() / m);
        let cov: f64 = dx.iter().zip(&dy).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (m - 1.0);
        let sx = (dx.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let sy = (dy.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let oracle = cov / (sx * sy);
        assert!((temporal_consistency(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn tc_errors() {
        let flat = vec![1.0; 10];
        let ramp: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(temporal_consistency(&flat, &flat), Err(Error::UndefinedCorrelation(_))));
        // A ramp has constant first differences, so zero variance as well.
        assert!(matches!(temporal_consistency(&ramp, &flat), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(
            temporal_consistency(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn residual_stats_cases() {
        let raw = vec![1.0, 2.0, 3.0, 4.0];
        let same = residual_stats(&raw, &raw, 1e-9, 10).unwrap();
        assert_eq!(same.max_abs, 0.0);
        assert_eq!(same.fraction_within, 1.0);
        assert_eq!(same.nonzero, 0);
        assert_eq!(same.histogram[0].count, 4);

        let cleaned = vec![1.0, -0.5, 3.0, 4.0];
        let one = residual_stats(&raw, &cleaned, 0.5, 4).unwrap();
        assert_eq!(one.max_abs, 2.5);
        assert_eq!(one.nonzero, 1);
        assert_eq!(one.nonzero_fraction_within, 0.0);
        assert_eq!(one.fraction_within, 0.75);
        assert_eq!(one.histogram.iter().map(|b| b.count).sum::<usize>(), 4);
        assert_eq!(one.histogram[3].count, 1);
    }

    #[test]
    fn rate_of_change_cases() {
        let flat = rate_of_change(&[5.0; 10], 60.0).unwrap();
        assert!(flat.per_minute.iter().all(|&r| r == 0.0));
        let ramp: Vec<f64> = (0..20).map(|i| 0.1 * i as f64).collect();
        let roc = rate_of_change(&ramp, 60.0).unwrap();
        assert!(roc.per_minute.iter().all(|r| (r - 0.1).abs() < 1e-12));
        let slow = rate_of_change(&ramp, 900.0).unwrap();
        assert!((slow.max - 0.1 / 15.0).abs() < 1e-12);
        assert!(rate_of_change(&[1.0], 60.0).is_err());
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identical_rows_project_to_one_point() {
        let row: Vec<f64> = (0..16).map(|k| k as f64 * 0.1).collect();
        let mu = Matrix::from_rows(&vec![row; 10]).unwrap();
        let p = project_latent(&mu).unwrap();
        assert!(p.fallback);
        assert!(p.coords.iter().all(|c| *c == p.coords[0]));
    }

    #[test]
    fn planar_points_keep_distances() {
        // Orthonormal basis of a plane in 16-D, offset from the origin.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = random_matrix(2, 16, 21);
        let mut u: Vec<f64> = raw.row(0).to_vec();
        let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= nu);
        let mut w: Vec<f64> = raw.row(1).to_vec();
        let proj: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&u).for_each(|(a, b)| *a -= proj * b);
        let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= nw);

        let points: Vec<(f64, f64)> = (0..40)
            .map(|_| (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
            .collect();
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|&(a, b)| (0..16).map(|k| 0.7 + a * u[k] + b * w[k]).collect())
            .collect();
        let p = project_latent(&Matrix::from_rows(&rows).unwrap()).unwrap();
        assert!(!p.fallback);
        for i in 0..40 {
            for j in 0..40 {
                let original = ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
                let projected =
                    ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
                assert!((original - projected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_variance_matches_power_iteration() {
        let n = 200;
        let mut mu = random_matrix(n, 16, 3);
        // Stretch a few directions so the top eigenvalues are well separated.
        for i in 0..n {
            let row = mu.row_mut(i);
            row[0] *= 4.0;
            row[5] *= 2.5;
        }
        let p = project_latent(&mu).unwrap();

        // Oracle: explicit covariance, then power iteration with deflation.
        let d = 16;
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| mu.get(i, j)).sum::<f64>() / n as f64).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..n {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (mu.get(i, a) - mean[a]) * (mu.get(i, b) - mean[b]) / (n as f64 - 1.0);
                }
            }
        }
        let mut eigen = Vec::new();
        for _ in 0..2 {
            let mut v = vec![1.0; d];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let next: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a][b] * v[b]).sum()).collect();
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                lambda = norm;
                v = next.iter().map(|x| x / norm).collect();
            }
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] -= lambda * v[a] * v[b];
                }
            }
            eigen.push(lambda);
        }
        let sample_var = |k: usize| p.coords.iter().map(|c| c[k] * c[k]).sum::<f64>() / (n as f64 - 1.0);
        for k in 0..2 {
            assert!((p.variances[k] - eigen[k]).abs() < 1e-8 * eigen[k]);
            assert!((sample_var(k) - eigen[k]).abs() < 1e-8 * eigen[k]);
        }
        // Orthonormal axes.
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        assert!((dot(&p.axes[0], &p.axes[0]) - 1.0).abs() < 1e-10);
        assert!((dot(&p.axes[1], &p.axes[1]) - 1.0).abs() < 1e-10);
        assert!(dot(&p.axes[0], &p.axes[1]).abs() < 1e-10);
    }

    #[test]
    fn projection_needs_three_rows() {
        assert!(matches!(
            project_latent(&random_matrix(2, 16, 1)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn window_labels_follow_overlap() {
        let mut mask = vec![false; 20];
        mask[9] = true;
        assert_eq!(window_labels(&[0, 5, 10], 5, &mask), vec![false, true, false]);
    }

    #[test]
    fn baseline_leaves_clean_series_and_removes_spike() {
        let config = DetectConfig::default();
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.02).sin()).collect();
        let (cleaned, mask) = baseline_rolling_median(&x, &config).unwrap();
        assert!(mask.iter().all(|&m| !m));
        assert_eq!(cleaned, x);

        let mut spiky = x.clone();
        spiky[250] += 5.0;
        let (cleaned, mask) = baseline_rolling_median(&spiky, &config).unwrap();
        assert!(mask[250]);
        let median = rolling_stats(&spiky, config.spike_window).unwrap().median[250];
        assert_eq!(cleaned[250], median);
        assert!((cleaned[250] - x[250]).abs() < 0.1);
    }
}
