//! Gap filling, z-score normalization and window extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{population_moments, Scalar};
use crate::series_io::RawSeries;

/// Model input window length.
pub const DEFAULT_WINDOW: usize = 48;
const DEGENERATE_STD: f64 = 1e-12;
const SLIDING_STD_FLOOR: f64 = 1e-8;

/// Mean and population standard deviation used for z-scoring, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats<T> {
    pub mean: T,
    pub std: T,
}

impl<T: Scalar> NormStats<T> {
    pub fn from_values(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries);
        }
        let (mean, var) = population_moments(values);
        let stats = Self {
            mean,
            std: var.sqrt(),
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > T::lit(DEGENERATE_STD)) || !self.mean.is_finite() {
            return Err(Error::DegenerateSeries(self.std.to_f64_lossy()));
        }
        Ok(())
    }

    #[inline]
    pub fn normalize(&self, value: T) -> T {
        (value - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, value: T) -> T {
        value * self.std + self.mean
    }
}

/// A series with every flagged sample replaced by an interpolated value.
#[derive(Debug, Clone, PartialEq)]
pub struct GapFilled<T> {
    pub timestamps: Vec<i64>,
    pub values: Vec<T>,
    /// `true` where the value was interpolated rather than observed.
    pub gap_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries<T> {
    pub values: Vec<T>,
    pub stats: NormStats<T>,
    pub gap_mask: Vec<bool>,
}

/// Fills flagged samples. Interior gaps are interpolated linearly in time
/// between the nearest valid neighbours; leading gaps take the first valid
/// value and trailing gaps the last one.
pub fn fill_gaps<T: Scalar>(series: &RawSeries<T>) -> Result<GapFilled<T>> {
    let valid: Vec<usize> = (0..series.len()).filter(|&i| series.is_valid(i)).collect();
    let (&first, &last) = match (valid.first(), valid.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptySeries),
    };

    let mut values = series.values.clone();
    let gap_mask: Vec<bool> = (0..series.len()).map(|i| !series.is_valid(i)).collect();

    for v in &mut values[..first] {
        *v = series.values[first];
    }
    for v in &mut values[last + 1..] {
        *v = series.values[last];
    }
    for pair in valid.windows(2) {
        let (left, right) = (pair[0], pair[1]);
        if right - left < 2 {
            continue;
        }
        let (t0, t1) = (series.timestamps[left], series.timestamps[right]);
        let (v0, v1) = (series.values[left], series.values[right]);
        let span = T::lit((t1 - t0) as f64);
        for (i, value) in values.iter_mut().enumerate().take(right).skip(left + 1) {
            let frac = T::lit((series.timestamps[i] - t0) as f64) / span;
            *value = v0 + (v1 - v0) * frac;
        }
    }

    Ok(GapFilled {
        timestamps: series.timestamps.clone(),
        values,
        gap_mask,
    })
}

/// Z-scores a gap-free series. Supplied statistics are used verbatim, so the
/// training-time statistics can be reapplied at inference.
pub fn zscore_normalize<T: Scalar>(
    series: &GapFilled<T>,
    stats: Option<NormStats<T>>,
) -> Result<NormalizedSeries<T>> {
    let stats = match stats {
        Some(s) => {
            s.validate()?;
            s
        }
        None => NormStats::from_values(&series.values)?,
    };
    Ok(NormalizedSeries {
        values: series.values.iter().map(|&v| stats.normalize(v)).collect(),
        stats,
        gap_mask: series.gap_mask.clone(),
    })
}

/// Local z-score using the window `[t - w_local, t + w_local]`, shrunk at the
/// series edges. Standard deviations are floored at 1e-8.
pub fn sliding_window_normalize<T: Scalar>(values: &[T], w_local: usize) -> Result<Vec<T>> {
    if w_local < 2 {
        return Err(Error::config(format!("sliding window half-width must be >= 2, got {w_local}")));
    }
    if values.len() <= 2 * w_local {
        return Err(Error::InsufficientData {
            needed: 2 * w_local + 1,
            got: values.len(),
        });
    }
    let n = values.len();
    let floor = T::lit(SLIDING_STD_FLOOR);
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(w_local);
            let hi = (t + w_local).min(n - 1);
            let (mean, var) = population_moments(&values[lo..=hi]);
            (values[t] - mean) / var.sqrt().max(floor)
        })
        .collect())
}

/// Overlapping windows `x[i..i+w]` with stride `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch<T> {
    pub windows: Matrix<T>,
    pub origins: Vec<usize>,
    pub series_len: usize,
}

impl<T: Scalar> WindowBatch<T> {
    pub fn width(&self) -> usize {
        self.windows.cols()
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

pub fn make_windows<T: Scalar>(values: &[T], width: usize, stride: usize) -> Result<WindowBatch<T>> {
    if width == 0 || stride == 0 {
        return Err(Error::config("window width and stride must be positive"));
    }
    if values.len() < width {
        return Err(Error::InsufficientData {
            needed: width,
            got: values.len(),
        });
    }
    let origins: Vec<usize> = (0..=values.len() - width).step_by(stride).collect();
    let mut data = Vec::with_capacity(origins.len() * width);
    for &o in &origins {
        data.extend_from_slice(&values[o..o + width]);
    }
    Ok(WindowBatch {
        windows: Matrix::from_vec(origins.len(), width, data)?,
        origins,
        series_len: values.len(),
    })
}

/// Like [`make_windows`], but also includes the window ending at the last
/// sample so every sample is covered whatever the stride.
pub fn make_covering_windows<T: Scalar>(values: &[T], width: usize, stride: usize) -> Result<WindowBatch<T>> {
    let mut batch = make_windows(values, width, stride)?;
    let last = values.len() - width;
    if batch.origins.last() != Some(&last) {
        let mut data = batch.windows.into_vec();
        data.extend_from_slice(&values[last..]);
        batch.origins.push(last);
        batch.windows = Matrix::from_vec(batch.origins.len(), width, data)?;
    }
    Ok(batch)
}
