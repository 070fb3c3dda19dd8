use std::io::{BufRead, Write};

use chrono::NaiveDate;

use super::{RawSeries, SampleFlag};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Placeholder NOAA writes for missing heights.
pub const DART_SENTINEL: f64 = 9999.0;
const SENTINEL_TOLERANCE: f64 = 1e-6;
const COLUMNS: usize = 8;

/// Parses the NOAA DART text layout:
/// `YEAR MONTH DAY HOUR MIN SEC T HEIGHT`, one sample per line.
///
/// Lines starting with `#` are headers and blank lines are ignored. Heights
/// within 1e-6 of 9999 are marked [`SampleFlag::FlaggedMissing`].
pub fn parse_dart<T: Scalar, R: BufRead>(reader: R) -> Result<RawSeries<T>> {
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut flags = Vec::new();

    for (index, line) in reader.split(b'\n').enumerate() {
        let line_no = index + 1;
        let bytes = line?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Parse {
            line: line_no,
            message: "line is not valid UTF-8".into(),
        })?;
        let text = text.trim_end_matches('\r');
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }

        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {COLUMNS} columns, found {}", fields.len()),
            });
        }
        let timestamp = parse_timestamp(&fields[..6], line_no)?;
        let height: f64 = fields[7].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("unparseable height `{}`", fields[7]),
        })?;
        if !height.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite height `{}`", fields[7]),
            });
        }

        if let Some(&previous) = timestamps.last() {
            if timestamp <= previous {
                return Err(Error::Ordering {
                    line: line_no,
                    timestamp,
                    previous,
                });
            }
        }
        timestamps.push(timestamp);
        if (height - DART_SENTINEL).abs() <= SENTINEL_TOLERANCE {
            values.push(T::nan());
            flags.push(SampleFlag::FlaggedMissing);
        } else {
            values.push(T::lit(height));
            flags.push(SampleFlag::Valid);
        }
    }

    Ok(RawSeries {
        timestamps,
        values,
        flags,
    })
}

pub fn parse_dart_str<T: Scalar>(text: &str) -> Result<RawSeries<T>> {
    parse_dart(text.as_bytes())
}

fn parse_timestamp(fields: &[&str], line: usize) -> Result<i64> {
    let mut parts = [0u32; 6];
    for (slot, field) in parts.iter_mut().zip(fields) {
        *slot = field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("unparseable date/time field `{field}`"),
        })?;
    }
    let [year, month, day, hour, minute, second] = parts;
    NaiveDate::from_ymd_opt(year as i32, month, day)
        .and_then(|date| date.and_hms_opt(hour, minute, second))
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("invalid date {year:04}-{month:02}-{day:02} {hour:02}:{minute:02}:{second:02}"),
        })
}

/// Writes a series in DART text form. Valid heights use the shortest decimal
/// representation that parses back to the same value; flagged samples are
/// written as the 9999 sentinel.
pub fn write_dart<T: Scalar, W: Write>(
    series: &RawSeries<T>,
    mut writer: W,
    comments: &[String],
) -> Result<()> {
    for comment in comments {
        writeln!(writer, "# {comment}")?;
    }
    writeln!(writer, "#YY  MM DD hh mm ss T   HEIGHT")?;
    writeln!(writer, "#yr  mo dy hr mn  s -        m")?;
    for i in 0..series.len() {
        let dt = chrono::DateTime::from_timestamp(series.timestamps[i], 0).ok_or_else(|| {
            Error::config(format!("timestamp {} out of range", series.timestamps[i]))
        })?;
        let stamp = dt.format("%Y %m %d %H %M %S");
        match series.flags[i] {
            SampleFlag::Valid => {
                writeln!(writer, "{stamp} 1 {}", series.values[i].to_f64_lossy())?
            }
            SampleFlag::FlaggedMissing => writeln!(writer, "{stamp} 1 9999.000")?,
        }
    }
    writer.flush()?;
    Ok(())
}
