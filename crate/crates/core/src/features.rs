//! Cumulative-intensity features from four-channel acceleration records.
//!
//! A record carries base and roof accelerations in two horizontal
//! directions. Each fixed-length segment is reduced to a stacked vector of
//! cumulative intensities `I = ∫ |a|^η dt` over a grid of exponents η, laid
//! out as
//!
//! ```text
//! [base_d1 over η.., top_d1 over η.., base_d2 over η.., top_d2 over η..]
//! ```
//!
//! Integrals use the trapezoid rule on the uniform sample grid. A segment of
//! `S` intervals holds `S + 1` samples; adjacent segments share their
//! boundary sample, so a record covering `T` seconds at rate `fs` holds
//! `T * fs + 1` samples.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sensor channels in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    BaseD1,
    BaseD2,
    TopD1,
    TopD2,
}

impl Channel {
    /// CSV column order.
    pub const ALL: [Channel; 4] = [
        Channel::BaseD1,
        Channel::BaseD2,
        Channel::TopD1,
        Channel::TopD2,
    ];

    /// Block order inside a [`FeatureVector`]: direction 1 (base, top),
    /// then direction 2 (base, top).
    pub const FEATURE_LAYOUT: [Channel; 4] = [
        Channel::BaseD1,
        Channel::TopD1,
        Channel::BaseD2,
        Channel::TopD2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::BaseD1 => "base_d1",
            Channel::BaseD2 => "base_d2",
            Channel::TopD1 => "top_d1",
            Channel::TopD2 => "top_d2",
        }
    }

    fn index(self) -> usize {
        match self {
            Channel::BaseD1 => 0,
            Channel::BaseD2 => 1,
            Channel::TopD1 => 2,
            Channel::TopD2 => 3,
        }
    }
}

pub const CSV_HEADER: &str = "time,base_d1,base_d2,top_d1,top_d2";

/// Uniformly sampled four-channel acceleration record, in g.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelRecord {
    sample_rate: f64,
    channels: [Vec<f64>; 4],
}

impl AccelRecord {
    /// Channels are given in [`Channel::ALL`] order.
    pub fn new(sample_rate: f64, channels: [Vec<f64>; 4]) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(invalid("all four channels must have equal length"));
        }
        if len < 2 {
            return Err(invalid(format!("record needs at least 2 samples, got {len}")));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Covered time span, `(len - 1) / sample_rate`.
    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 / self.sample_rate
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        &self.channels[ch.index()]
    }

    pub fn into_channels(self) -> [Vec<f64>; 4] {
        self.channels
    }

    /// Reads the `time,base_d1,base_d2,top_d1,top_d2` format. Lines starting
    /// with `#` are skipped. Sampling must be uniform within 1e-6 s.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut header_seen = false;
        let mut time = Vec::new();
        let mut channels: [Vec<f64>; 4] = Default::default();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if !header_seen {
                let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if cols.join(",") != CSV_HEADER {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected header `{CSV_HEADER}`, found `{trimmed}`"),
                    });
                }
                header_seen = true;
                continue;
            }
            let mut fields = trimmed.split(',');
            let mut parse_next = |name: &str| -> Result<f64> {
                let raw = fields.next().ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("missing column `{name}`"),
                })?;
                let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("column `{name}`: cannot parse `{}`", raw.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("column `{name}`: non-finite value"),
                    });
                }
                Ok(v)
            };
            time.push(parse_next("time")?);
            for ch in Channel::ALL {
                channels[ch.index()].push(parse_next(ch.name())?);
            }
            if fields.next().is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "too many columns".into(),
                });
            }
        }
        if !header_seen {
            return Err(Error::Parse {
                line: 0,
                message: "empty file".into(),
            });
        }
        if time.len() < 2 {
            return Err(invalid(format!("record needs at least 2 samples, got {}", time.len())));
        }
        let n = time.len();
        let span = time[n - 1] - time[0];
        if !(span > 0.0) {
            return Err(invalid("time column must be increasing"));
        }
        let dt = span / (n - 1) as f64;
        for (i, &t) in time.iter().enumerate() {
            let expected = time[0] + i as f64 * dt;
            if (t - expected).abs() > 1e-6 {
                return Err(invalid(format!(
                    "non-uniform sampling at sample {i}: t = {t}, expected {expected}"
                )));
            }
        }
        AccelRecord::new((n - 1) as f64 / span, channels)
    }

    /// Writes the CSV format read by [`AccelRecord::read_csv`]. Each line of
    /// `comment` is emitted as a leading `# ` line.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(comment) = comment {
            for line in comment.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.len() {
            let t = i as f64 / self.sample_rate;
            writeln!(
                w,
                "{t},{:e},{:e},{:e},{:e}",
                self.channels[0][i], self.channels[1][i], self.channels[2][i], self.channels[3][i]
            )?;
        }
        Ok(())
    }
}

/// A fixed-duration window cut from an [`AccelRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct AccelSegment {
    pub record_id: String,
    pub index: usize,
    sample_rate: f64,
    intervals: usize,
    channels: [Vec<f64>; 4],
}

impl AccelSegment {
    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Number of sampling intervals; `duration * sample_rate`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn duration(&self) -> f64 {
        self.intervals as f64 / self.sample_rate
    }

    pub fn channel(&self, ch: Channel) -> &[f64] {
        &self.channels[ch.index()]
    }
}

/// Ordered exponent grid for the cumulative intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EtaGrid(Vec<f64>);

impl EtaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("eta grid must not be empty"));
        }
        if values.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(invalid("eta values must be finite and positive"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("eta grid must be strictly increasing"));
        }
        Ok(Self(values))
    }

    /// `count` values `step, 2*step, ..., count*step`.
    pub fn arithmetic(step: f64, count: usize) -> Result<Self> {
        Self::new((1..=count).map(|k| k as f64 * step).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Some(step)` when every value is `k * step` for `k = 1, 2, ...`.
    fn multiples_of_first(&self) -> Option<f64> {
        let step = self.0[0];
        self.0
            .iter()
            .enumerate()
            .all(|(k, &v)| (v - (k + 1) as f64 * step).abs() <= 1e-12 * v)
            .then_some(step)
    }
}

impl Default for EtaGrid {
    /// 0.1, 0.2, ..., 10.0.
    fn default() -> Self {
        Self((1..=100).map(|k| k as f64 / 10.0).collect())
    }
}

impl TryFrom<Vec<f64>> for EtaGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EtaGrid> for Vec<f64> {
    fn from(g: EtaGrid) -> Self {
        g.0
    }
}

/// Stacked cumulative intensities, `4 * |grid|` non-negative values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Offset of the `(channel, eta index)` entry.
    pub fn offset(grid_len: usize, channel: Channel, eta_index: usize) -> usize {
        let block = Channel::FEATURE_LAYOUT
            .iter()
            .position(|&c| c == channel)
            .expect("layout covers all channels");
        block * grid_len + eta_index
    }
}

/// Trapezoid approximation of `∫ |a|^eta dt` over the samples of `channel`.
pub fn cumulative_intensity(channel: &[f64], eta: f64, dt: f64) -> Result<f64> {
    if channel.len() < 2 {
        return Err(invalid(format!(
            "channel needs at least 2 samples, got {}",
            channel.len()
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let n = channel.len();
    let inner: f64 = channel[1..n - 1].iter().map(|a| a.abs().powf(eta)).sum();
    let ends = 0.5 * (channel[0].abs().powf(eta) + channel[n - 1].abs().powf(eta));
    Ok(dt * (inner + ends))
}

/// All intensities of one channel over `grid`.
fn channel_intensities(channel: &[f64], grid: &EtaGrid, dt: f64) -> Vec<f64> {
    let n = channel.len();
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
    let mut acc = vec![0.0; grid.len()];
    match grid.multiples_of_first() {
        // |a|^(k*step) by repeated multiplication of |a|^step.
        Some(step) => {
            for (i, a) in channel.iter().enumerate() {
                let base = a.abs().powf(step);
                let w = weight(i);
                let mut p = base;
                for slot in acc.iter_mut() {
                    *slot += w * p;
                    p *= base;
                }
            }
        }
        None => {
            for (i, a) in channel.iter().enumerate() {
                let abs = a.abs();
                let w = weight(i);
                for (slot, &eta) in acc.iter_mut().zip(grid.values()) {
                    *slot += w * abs.powf(eta);
                }
            }
        }
    }
    acc.iter_mut().for_each(|v| *v *= dt);
    acc
}

/// Splits a record into contiguous `segment_seconds` windows from the start.
/// A trailing partial window is dropped.
pub fn segment_record(
    record: &AccelRecord,
    record_id: &str,
    segment_seconds: f64,
) -> Result<Vec<AccelSegment>> {
    let exact = segment_seconds * record.sample_rate;
    let intervals = exact.round();
    if !(segment_seconds > 0.0) || intervals < 1.0 || (exact - intervals).abs() > 1e-6 {
        return Err(invalid(format!(
            "segment length {segment_seconds} s is not a positive whole number of samples at {} Hz",
            record.sample_rate
        )));
    }
    let intervals = intervals as usize;
    let count = (record.len() - 1) / intervals;
    Ok((0..count)
        .map(|k| {
            let range = k * intervals..=(k + 1) * intervals;
            AccelSegment {
                record_id: record_id.to_string(),
                index: k,
                sample_rate: record.sample_rate,
                intervals,
                channels: std::array::from_fn(|c| record.channels[c][range.clone()].to_vec()),
            }
        })
        .collect())
}

/// Stacked feature vector of one segment in [`Channel::FEATURE_LAYOUT`] order.
pub fn build_feature_vector(segment: &AccelSegment, grid: &EtaGrid) -> Result<FeatureVector> {
    let dt = 1.0 / segment.sample_rate;
    let mut values = Vec::with_capacity(4 * grid.len());
    for ch in Channel::FEATURE_LAYOUT {
        let samples = segment.channel(ch);
        if samples.len() < 2 {
            return Err(invalid("segment channel needs at least 2 samples"));
        }
        values.extend(channel_intensities(samples, grid, dt));
    }
    Ok(FeatureVector(values))
}

/// Per-feature min-max scaling learned from training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(training: &[FeatureVector]) -> Result<Self> {
        if training.len() < 2 {
            return Err(invalid(format!(
                "normalizer needs at least 2 training vectors, got {}",
                training.len()
            )));
        }
        let dim = training[0].len();
        if dim == 0 {
            return Err(invalid("feature vectors are empty"));
        }
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for (i, v) in training.iter().enumerate() {
            if v.len() != dim {
                return Err(invalid(format!(
                    "training vector {i} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            for (j, &x) in v.as_slice().iter().enumerate() {
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)`, unclipped; constant features map to 0.
    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector> {
        if v.len() != self.dim() {
            return Err(invalid(format!(
                "feature dimension {} does not match normalizer dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(FeatureVector(
            v.as_slice()
                .iter()
                .zip(self.min.iter().zip(&self.max))
                .map(|(&x, (&lo, &hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
                .collect(),
        ))
    }
}

pub fn fit_normalizer(training: &[FeatureVector]) -> Result<Normalizer> {
    Normalizer::fit(training)
}

pub fn apply_normalizer(n: &Normalizer, v: &FeatureVector) -> Result<FeatureVector> {
    n.apply(v)
}
