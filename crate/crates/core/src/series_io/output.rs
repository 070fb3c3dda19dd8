use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CLEANED_CSV_HEADER: [&str; 6] =
    ["time_iso8601", "raw_m", "cleaned_m", "spike", "step", "residual_m"];

/// Final per-sample product of the cleaning pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanedOutput<T> {
    pub timestamps: Vec<i64>,
    pub raw: Vec<T>,
    pub cleaned: Vec<T>,
    pub spike: Vec<bool>,
    pub step: Vec<bool>,
    /// `raw - cleaned`, stored as computed.
    pub residual: Vec<T>,
}

impl<T: Scalar> CleanedOutput<T> {
    pub fn new(
        timestamps: Vec<i64>,
        raw: Vec<T>,
        cleaned: Vec<T>,
        spike: Vec<bool>,
        step: Vec<bool>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if [raw.len(), cleaned.len(), spike.len(), step.len()]
            .iter()
            .any(|&len| len != n)
        {
            return Err(Error::shape("cleaned output arrays must have equal length"));
        }
        let residual = raw.iter().zip(&cleaned).map(|(&r, &c)| r - c).collect();
        Ok(Self {
            timestamps,
            raw,
            cleaned,
            spike,
            step,
            residual,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

pub fn format_timestamp(seconds: i64) -> String {
    chrono::DateTime::from_timestamp(seconds, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| seconds.to_string())
}

fn parse_timestamp(text: &str) -> Option<i64> {
    chrono::DateTime::parse_from_rfc3339(text)
        .ok()
        .map(|dt| dt.timestamp())
}

/// Writes `time_iso8601,raw_m,cleaned_m,spike,step,residual_m` with six decimals.
pub fn write_cleaned_csv<T: Scalar, W: Write>(out: &CleanedOutput<T>, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(CLEANED_CSV_HEADER)?;
    for i in 0..out.len() {
        csv.write_record([
            format_timestamp(out.timestamps[i]),
            format!("{:.6}", out.raw[i].to_f64_lossy()),
            format!("{:.6}", out.cleaned[i].to_f64_lossy()),
            u8::from(out.spike[i]).to_string(),
            u8::from(out.step[i]).to_string(),
            format!("{:.6}", out.residual[i].to_f64_lossy()),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads back a file produced by [`write_cleaned_csv`].
pub fn read_cleaned_csv<R: Read>(reader: R) -> Result<CleanedOutput<f64>> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(CLEANED_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected cleaned CSV header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = CleanedOutput {
        timestamps: Vec::new(),
        raw: Vec::new(),
        cleaned: Vec::new(),
        spike: Vec::new(),
        step: Vec::new(),
        residual: Vec::new(),
    };
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let field = |k: usize| record.get(k).unwrap_or("");
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("unparseable {what}"),
        };
        out.timestamps
            .push(parse_timestamp(field(0)).ok_or_else(|| bad("timestamp"))?);
        out.raw.push(field(1).parse().map_err(|_| bad("raw_m"))?);
        out.cleaned.push(field(2).parse().map_err(|_| bad("cleaned_m"))?);
        out.spike.push(field(3) == "1");
        out.step.push(field(4) == "1");
        out.residual.push(field(5).parse().map_err(|_| bad("residual_m"))?);
    }
    Ok(out)
}
