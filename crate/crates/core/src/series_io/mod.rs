//! Reading and writing the on-disk artifacts: DART text files, cleaned-series
//! CSV, and model checkpoints.

mod checkpoint;
mod dart;
mod output;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use dart::{parse_dart, parse_dart_str, write_dart, DART_SENTINEL};
pub use output::{format_timestamp, read_cleaned_csv, write_cleaned_csv, CleanedOutput, CLEANED_CSV_HEADER};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    Valid,
    FlaggedMissing,
}

/// Timestamped raw samples. Flagged samples hold `NaN` in `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries<T> {
    /// Seconds since the Unix epoch, strictly increasing.
    pub timestamps: Vec<i64>,
    /// Water-column height in meters.
    pub values: Vec<T>,
    pub flags: Vec<SampleFlag>,
}

impl<T: Scalar> RawSeries<T> {
    pub fn new(timestamps: Vec<i64>, values: Vec<T>, flags: Vec<SampleFlag>) -> Result<Self> {
        if timestamps.len() != values.len() || values.len() != flags.len() {
            return Err(Error::shape(format!(
                "raw series arrays differ in length: {} timestamps, {} values, {} flags",
                timestamps.len(),
                values.len(),
                flags.len()
            )));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::Ordering {
                    line: i + 2,
                    timestamp: pair[1],
                    previous: pair[0],
                });
            }
        }
        let mut values = values;
        for (i, flag) in flags.iter().enumerate() {
            match flag {
                SampleFlag::FlaggedMissing => values[i] = T::nan(),
                SampleFlag::Valid if !values[i].is_finite() => {
                    return Err(Error::numeric(format!("valid sample {i} is not finite")))
                }
                SampleFlag::Valid => {}
            }
        }
        Ok(Self {
            timestamps,
            values,
            flags,
        })
    }

    /// Builds an all-valid series.
    pub fn from_values(timestamps: Vec<i64>, values: Vec<T>) -> Result<Self> {
        let flags = vec![SampleFlag::Valid; values.len()];
        Self::new(timestamps, values, flags)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.flags[index] == SampleFlag::Valid
    }

    pub fn valid_count(&self) -> usize {
        self.flags.iter().filter(|f| **f == SampleFlag::Valid).count()
    }

    /// Median spacing between consecutive timestamps, in seconds.
    pub fn cadence_seconds(&self) -> Option<i64> {
        if self.timestamps.len() < 2 {
            return None;
        }
        let mut gaps: Vec<i64> = self.timestamps.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_unstable();
        Some(gaps[gaps.len() / 2])
    }
}
