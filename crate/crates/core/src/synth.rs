//! Seeded synthetic tide-gauge series with labelled spikes, steps, drift and
//! gaps.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series_io::{format_timestamp, write_dart, RawSeries, SampleFlag};

pub const M2_PERIOD_SECONDS: f64 = 44_714.0;
pub const S2_PERIOD_SECONDS: f64 = 43_200.0;
/// Shortest series the detectors can handle with default windows.
pub const MIN_LENGTH: usize = 2 * 480;
const PLACEMENT_ATTEMPTS: usize = 100_000;
/// Free samples kept between any two injected events.
const EVENT_CLEARANCE: usize = 8;

pub const GROUND_TRUTH_HEADER: [&str; 6] = [
    "time_iso8601",
    "clean_m",
    "contaminated_m",
    "is_spike",
    "is_step",
    "is_gap",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TideComponent {
    pub amplitude: f64,
    pub period_seconds: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeSpec {
    pub count: usize,
    /// Magnitude range in units of `unit_sigma` (or the noise σ if unset).
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub width_min: usize,
    pub width_max: usize,
    /// Meters per amplitude unit; defaults to the noise σ.
    pub unit_sigma: Option<f64>,
}

impl Default for SpikeSpec {
    fn default() -> Self {
        Self {
            count: 0,
            amplitude_min: 5.0,
            amplitude_max: 25.0,
            width_min: 1,
            width_max: 3,
            unit_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSpec {
    pub count: usize,
    /// Magnitude range in meters; the sign is drawn separately.
    pub magnitude_min: f64,
    pub magnitude_max: f64,
    pub min_separation: usize,
    /// Steps stay at least this far from either end.
    pub edge_margin: usize,
}

impl Default for StepSpec {
    fn default() -> Self {
        Self {
            count: 0,
            magnitude_min: 0.2,
            magnitude_max: 0.6,
            min_separation: 3000,
            edge_margin: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    #[default]
    None,
    /// Meters per day.
    Linear { slope_per_day: f64 },
    /// `amplitude · (exp(rate · days) − 1)`.
    Exponential { amplitude: f64, rate_per_day: f64 },
}

impl DriftSpec {
    pub fn value(&self, seconds: f64) -> f64 {
        let days = seconds / 86_400.0;
        match *self {
            DriftSpec::None => 0.0,
            DriftSpec::Linear { slope_per_day } => slope_per_day * days,
            DriftSpec::Exponential {
                amplitude,
                rate_per_day,
            } => amplitude * (rate_per_day * days).exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSpec {
    pub count: usize,
    pub length_min: usize,
    pub length_max: usize,
}

impl Default for GapSpec {
    fn default() -> Self {
        Self {
            count: 0,
            length_min: 1,
            length_max: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub length: usize,
    pub cadence_seconds: i64,
    pub start_timestamp: i64,
    /// Constant offset added to the clean series (meters).
    pub mean_level: f64,
    pub tides: Vec<TideComponent>,
    pub noise_sigma: f64,
    pub spikes: SpikeSpec,
    pub steps: StepSpec,
    pub drift: DriftSpec,
    pub gaps: GapSpec,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            length: 20_000,
            cadence_seconds: 900,
            // 2022-01-01T00:00:00Z
            start_timestamp: 1_640_995_200,
            mean_level: 2584.0,
            tides: vec![
                TideComponent {
                    amplitude: 0.5,
                    period_seconds: M2_PERIOD_SECONDS,
                    phase: 0.0,
                },
                TideComponent {
                    amplitude: 0.5,
                    period_seconds: S2_PERIOD_SECONDS,
                    phase: 1.0,
                },
            ],
            noise_sigma: 0.05,
            spikes: SpikeSpec::default(),
            steps: StepSpec::default(),
            drift: DriftSpec::None,
            gaps: GapSpec::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.length < MIN_LENGTH {
            return bad(format!("length {} is below the minimum {MIN_LENGTH}", self.length));
        }
        if self.cadence_seconds <= 0 {
            return bad("cadence must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative".into());
        }
        if self.tides.iter().any(|t| !(t.period_seconds > 0.0) || !t.amplitude.is_finite()) {
            return bad("tidal components need a positive period and finite amplitude".into());
        }
        let s = &self.spikes;
        if s.width_min == 0 || s.width_min > s.width_max {
            return bad("spike widths must satisfy 1 <= min <= max".into());
        }
        if !(s.amplitude_min >= 0.0 && s.amplitude_min <= s.amplitude_max) {
            return bad("spike amplitudes must satisfy 0 <= min <= max".into());
        }
        let st = &self.steps;
        if !(st.magnitude_min >= 0.0 && st.magnitude_min <= st.magnitude_max) {
            return bad("step magnitudes must satisfy 0 <= min <= max".into());
        }
        let g = &self.gaps;
        if g.count > 0 && (g.length_min == 0 || g.length_min > g.length_max) {
            return bad("gap lengths must satisfy 1 <= min <= max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub start: usize,
    pub width: usize,
    /// Signed offset in meters added over the spike.
    pub amplitude: f64,
}

impl SpikeEvent {
    /// Inclusive end index.
    pub fn end(&self) -> usize {
        self.start + self.width - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// First sample carrying the new level.
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEvent {
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub timestamps: Vec<i64>,
    pub clean: Vec<f64>,
    pub contaminated: Vec<f64>,
    pub noise: Vec<f64>,
    pub drift: Vec<f64>,
    pub spikes: Vec<SpikeEvent>,
    pub steps: Vec<StepEvent>,
    pub gaps: Vec<GapEvent>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn spike_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for s in &self.spikes {
            mask[s.start..=s.end()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    pub fn step_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for s in &self.steps {
            mask[s.index] = true;
        }
        mask
    }

    pub fn gap_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for g in &self.gaps {
            mask[g.start..g.start + g.length].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Inclusive spike ranges, in order.
    pub fn spike_ranges(&self) -> Vec<(usize, usize)> {
        self.spikes.iter().map(|s| (s.start, s.end())).collect()
    }

    /// Clean series with the step offsets added: what a spike-only cleaner
    /// should recover.
    pub fn clean_with_steps(&self) -> Vec<f64> {
        let mut out = self.clean.clone();
        for step in &self.steps {
            out[step.index..].iter_mut().for_each(|v| *v += step.magnitude);
        }
        out
    }

    /// The contaminated series as raw observations, with gap samples flagged.
    pub fn to_raw_series(&self) -> Result<RawSeries<f64>> {
        let gap = self.gap_mask();
        let flags = gap
            .iter()
            .map(|&g| if g { SampleFlag::FlaggedMissing } else { SampleFlag::Valid })
            .collect();
        RawSeries::new(self.timestamps.clone(), self.contaminated.clone(), flags)
    }

    pub fn write_dart<W: Write>(&self, writer: W, spec: &SynthSpec) -> Result<()> {
        let comments = vec![
            format!("synthetic series, seed {}", spec.seed),
            format!(
                "{} spikes, {} steps, {} gaps",
                self.spikes.len(),
                self.steps.len(),
                self.gaps.len()
            ),
        ];
        write_dart(&self.to_raw_series()?, writer, &comments)
    }

    /// Writes `time_iso8601,clean_m,contaminated_m,is_spike,is_step,is_gap`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (spike, step, gap) = (self.spike_mask(), self.step_mask(), self.gap_mask());
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(GROUND_TRUTH_HEADER)?;
        for i in 0..self.len() {
            csv.write_record([
                format_timestamp(self.timestamps[i]),
                format!("{}", self.clean[i]),
                format!("{}", self.contaminated[i]),
                u8::from(spike[i]).to_string(),
                u8::from(step[i]).to_string(),
                u8::from(gap[i]).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Labels read back from a ground-truth CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSeries {
    pub timestamps: Vec<i64>,
    pub clean: Vec<f64>,
    pub contaminated: Vec<f64>,
    pub spike: Vec<bool>,
    pub step: Vec<bool>,
    pub gap: Vec<bool>,
}

impl LabelledSeries {
    /// Inclusive ranges of consecutive spike labels.
    pub fn spike_ranges(&self) -> Vec<(usize, usize)> {
        crate::detector::merge_segments(&self.spike, 0)
    }
}

pub fn read_ground_truth_csv<R: Read>(reader: R) -> Result<LabelledSeries> {
    let mut csv = csv::Reader::from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(GROUND_TRUTH_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: "unexpected ground-truth CSV header".into(),
        });
    }
    let mut out = LabelledSeries {
        timestamps: Vec::new(),
        clean: Vec::new(),
        contaminated: Vec::new(),
        spike: Vec::new(),
        step: Vec::new(),
        gap: Vec::new(),
    };
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let field = |k: usize| record.get(k).unwrap_or("");
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("unparseable {what}"),
        };
        let stamp = chrono::DateTime::parse_from_rfc3339(field(0))
            .map_err(|_| bad("timestamp"))?
            .timestamp();
        out.timestamps.push(stamp);
        out.clean.push(field(1).parse().map_err(|_| bad("clean_m"))?);
        out.contaminated
            .push(field(2).parse().map_err(|_| bad("contaminated_m"))?);
        out.spike.push(field(3) == "1");
        out.step.push(field(4) == "1");
        out.gap.push(field(5) == "1");
    }
    Ok(out)
}

/// Occupied index ranges (inclusive), used to keep events apart.
struct Occupancy {
    ranges: Vec<(usize, usize)>,
}

impl Occupancy {
    fn is_free(&self, start: usize, end: usize, clearance: usize) -> bool {
        self.ranges
            .iter()
            .all(|&(a, b)| end + clearance < a || start > b + clearance)
    }
}

fn placement_error(what: &str, count: usize) -> Error {
    Error::Spec(format!(
        "could not place {count} {what} under the separation constraints"
    ))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

pub fn generate(spec: &SynthSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let n = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occupied = Occupancy { ranges: Vec::new() };

    // Steps first: they have the strictest constraints.
    let st = &spec.steps;
    let mut steps: Vec<StepEvent> = Vec::with_capacity(st.count);
    if st.count > 0 {
        let lo = st.edge_margin.max(1);
        let hi = n.saturating_sub(st.edge_margin);
        if lo >= hi {
            return Err(placement_error("steps", st.count));
        }
        let mut attempts = 0;
        while steps.len() < st.count {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS {
                return Err(placement_error("steps", st.count));
            }
            let index = rng.random_range(lo..hi);
            if steps.iter().any(|s| s.index.abs_diff(index) < st.min_separation) {
                continue;
            }
            let magnitude = sign(&mut rng) * uniform(&mut rng, st.magnitude_min, st.magnitude_max);
            steps.push(StepEvent { index, magnitude });
        }
        steps.sort_by_key(|s| s.index);
        occupied.ranges.extend(steps.iter().map(|s| (s.index, s.index)));
    }

    let sp = &spec.spikes;
    let unit = sp.unit_sigma.unwrap_or(spec.noise_sigma);
    let mut spikes = Vec::with_capacity(sp.count);
    let mut attempts = 0;
    while spikes.len() < sp.count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(placement_error("spikes", sp.count));
        }
        let width = rng.random_range(sp.width_min..=sp.width_max);
        if width + 2 > n {
            return Err(placement_error("spikes", sp.count));
        }
        let start = rng.random_range(1..n - width);
        let end = start + width - 1;
        if !occupied.is_free(start, end, EVENT_CLEARANCE) {
            continue;
        }
        let amplitude = sign(&mut rng) * uniform(&mut rng, sp.amplitude_min, sp.amplitude_max) * unit;
        occupied.ranges.push((start, end));
        spikes.push(SpikeEvent {
            start,
            width,
            amplitude,
        });
    }
    spikes.sort_by_key(|s| s.start);

    let g = &spec.gaps;
    let mut gaps = Vec::with_capacity(g.count);
    let mut attempts = 0;
    while gaps.len() < g.count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(placement_error("gaps", g.count));
        }
        let length = rng.random_range(g.length_min..=g.length_max);
        if length + 2 > n {
            return Err(placement_error("gaps", g.count));
        }
        // Interior only, so every gap has valid neighbours on both sides.
        let start = rng.random_range(1..n - length);
        let end = start + length - 1;
        if !occupied.is_free(start, end, EVENT_CLEARANCE) {
            continue;
        }
        occupied.ranges.push((start, end));
        gaps.push(GapEvent { start, length });
    }
    gaps.sort_by_key(|g| g.start);

    let timestamps: Vec<i64> = (0..n as i64)
        .map(|i| spec.start_timestamp + i * spec.cadence_seconds)
        .collect();
    let mut drift = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as i64 * spec.cadence_seconds) as f64;
        let tide: f64 = spec
            .tides
            .iter()
            .map(|c| c.amplitude * (TAU * t / c.period_seconds + c.phase).sin())
            .sum();
        let d = spec.drift.value(t);
        drift.push(d);
        clean.push(spec.mean_level + tide + d);
    }

    let noise: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.noise_sigma * z
        })
        .collect();

    let mut effects = noise.clone();
    for s in &spikes {
        effects[s.start..=s.end()].iter_mut().for_each(|v| *v += s.amplitude);
    }
    for s in &steps {
        effects[s.index..].iter_mut().for_each(|v| *v += s.magnitude);
    }
    let contaminated = clean.iter().zip(&effects).map(|(c, e)| c + e).collect();

    Ok(GroundTruth {
        timestamps,
        clean,
        contaminated,
        noise,
        drift,
        spikes,
        steps,
        gaps,
    })
}
