//! ETT-style CSV ingestion, chronological splits, z-scoring and sliding windows.
//!
//! A window with target start `t` uses inputs `[t − T, t)` and targets
//! `[t, t + F)`. It belongs to the segment holding `t`, and its target must
//! stay inside that segment; its inputs may reach back into the previous one.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub timestamps: Vec<String>,
    /// Row-major `[L, N]`.
    pub values: Vec<f64>,
    pub channel_names: Vec<String>,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.channels();
        &self.values[i * n..(i + 1) * n]
    }

    /// Keeps the first `len` rows.
    pub fn truncate(&mut self, len: usize) {
        if len < self.len() {
            self.timestamps.truncate(len);
            self.values.truncate(len * self.channels());
        }
    }
}

/// Reads a CSV with header `date,<c1>,...,<cN>`. Row numbers in errors count
/// data rows from 1 (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Ingestion(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::Ingestion(format!("{} is empty", path.display())));
    }
    if header.get(0).map(str::trim) != Some("date") {
        return Err(Error::Ingestion(format!(
            "{}: first column must be 'date', found '{}'",
            path.display(),
            header.get(0).unwrap_or_default()
        )));
    }
    let channel_names: Vec<String> = header.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if channel_names.is_empty() {
        return Err(Error::Ingestion(format!("{}: no value columns", path.display())));
    }
    let n = channel_names.len();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::MalformedRow { row, msg: e.to_string() })?;
        if record.len() != n + 1 {
            return Err(Error::MalformedRow {
                row,
                msg: format!("expected {} fields, found {}", n + 1, record.len()),
            });
        }
        timestamps.push(record[0].to_string());
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::MalformedRow {
                row,
                msg: format!("non-numeric value '{field}' in column '{}'", channel_names[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    msg: format!("non-finite value in column '{}'", channel_names[col]),
                });
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Ingestion(format!("{} has no data rows", path.display())));
    }
    Ok(RawSeries {
        timestamps,
        values,
        channel_names,
    })
}

/// Chronological train/val/test ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive, got {self}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {self}")));
        }
        Ok(())
    }

    /// Parses `a:b:c`, normalizing by the sum (so `6:2:2` and `0.6:0.2:0.2`
    /// agree). Ratios that already sum to 1 are kept as written.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("split must look like a:b:c, got '{s}'")))?;
        let [a, b, c] = parts[..] else {
            return Err(Error::Config(format!("split must have three parts, got '{s}'")));
        };
        let total = a + b + c;
        if !(total > 0.0) {
            return Err(Error::Config(format!("split parts must be positive, got '{s}'")));
        }
        if (total - 1.0).abs() <= 1e-12 {
            return Self::new(a, b, c);
        }
        Self::new(a / total, b / total, c / total)
    }

    pub fn boundaries(&self, len: usize) -> [usize; 2] {
        let cut = |r: f64| ((r * len as f64) + 1e-9).floor() as usize;
        [cut(self.train), cut(self.train + self.val)]
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

/// Benchmark length and split for the datasets of the standard suite.
pub fn known_dataset(name: &str) -> Option<(usize, SplitSpec)> {
    let six = SplitSpec { train: 0.6, val: 0.2, test: 0.2 };
    let seven = SplitSpec { train: 0.7, val: 0.1, test: 0.2 };
    match name {
        "ETTh1" | "ETTh2" => Some((14_400, six)),
        "ETTm1" | "ETTm2" => Some((57_600, six)),
        "Weather" => Some((52_696, seven)),
        "Electricity" => Some((26_304, seven)),
        "Solar" => Some((52_560, six)),
        "Traffic" => Some((17_544, seven)),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Train, Segment::Val, Segment::Test];

    fn index(self) -> usize {
        match self {
            Segment::Train => 0,
            Segment::Val => 1,
            Segment::Test => 2,
        }
    }
}

/// Per-channel z-score statistics from the training segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and standard deviation of rows `[0, rows)`.
    pub fn fit(values: &[f64], channels: usize, rows: usize, names: &[String]) -> Result<Self> {
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for c in 0..channels {
            let col = (0..rows).map(|r| values[r * channels + c]);
            let m = col.clone().sum::<f64>() / rows as f64;
            let var = col.map(|v| (v - m) * (v - m)).sum::<f64>() / rows as f64;
            let s = var.sqrt();
            if !(s > 0.0) || s < 1e-12 * m.abs().max(1.0) {
                let name = names.get(c).map_or("?", String::as_str);
                return Err(Error::Ingestion(format!(
                    "channel '{name}' is constant over the training segment"
                )));
            }
            mean[c] = m;
            std[c] = s;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &mut [f64]) {
        let n = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v = (*v - self.mean[i % n]) / self.std[i % n];
        }
    }

    pub fn invert(&self, values: &mut [f64]) {
        let n = self.mean.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v = *v * self.std[i % n] + self.mean[i % n];
        }
    }
}

/// A normalized series with its two split boundaries.
#[derive(Clone, Debug)]
pub struct SplitSeries {
    /// Normalized row-major `[L, N]`.
    pub values: Vec<f64>,
    pub channels: usize,
    /// Segment borders `[0, train_end, val_end, L]`.
    pub borders: [usize; 4],
}

impl SplitSeries {
    pub fn len(&self) -> usize {
        self.borders[3]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_rows(&self, seg: Segment) -> std::ops::Range<usize> {
        let i = seg.index();
        self.borders[i]..self.borders[i + 1]
    }
}

/// Splits at `floor(train·L)` and `floor((train+val)·L)` and z-scores every
/// segment with training statistics.
pub fn split_and_normalize(raw: &RawSeries, spec: &SplitSpec) -> Result<(SplitSeries, NormStats)> {
    spec.validate()?;
    let len = raw.len();
    let [b1, b2] = spec.boundaries(len);
    if b1 == 0 || b2 <= b1 || b2 >= len {
        return Err(Error::Config(format!(
            "series of length {len} is too short for split {spec}"
        )));
    }
    let stats = NormStats::fit(&raw.values, raw.channels(), b1, &raw.channel_names)?;
    let mut values = raw.values.clone();
    stats.apply(&mut values);
    Ok((
        SplitSeries {
            values,
            channels: raw.channels(),
            borders: [0, b1, b2, len],
        },
        stats,
    ))
}

/// One mini-batch of windows.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[b, T, N]`
    pub x: Tensor,
    /// `[b, F, N]`
    pub y: Tensor,
    pub starts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct WindowedDataset {
    series: SplitSeries,
    pub stats: NormStats,
    pub lookback: usize,
    pub horizon: usize,
}

impl WindowedDataset {
    /// Fails with a configuration error if any segment has no windows.
    pub fn new(series: SplitSeries, stats: NormStats, lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::Config("lookback and horizon must be positive".into()));
        }
        let ds = Self {
            series,
            stats,
            lookback,
            horizon,
        };
        for seg in Segment::ALL {
            if ds.window_count(seg) == 0 {
                let rows = ds.series.segment_rows(seg);
                return Err(Error::Config(format!(
                    "{seg:?} segment (rows {}..{}) is too short for lookback {lookback} and horizon {horizon}",
                    rows.start, rows.end
                )));
            }
        }
        Ok(ds)
    }

    pub fn from_raw(raw: &RawSeries, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<Self> {
        let (series, stats) = split_and_normalize(raw, spec)?;
        Self::new(series, stats, lookback, horizon)
    }

    pub fn series(&self) -> &SplitSeries {
        &self.series
    }

    pub fn channels(&self) -> usize {
        self.series.channels
    }

    /// Valid target starts for a segment.
    pub fn target_starts(&self, seg: Segment) -> std::ops::Range<usize> {
        let rows = self.series.segment_rows(seg);
        let first = rows.start.max(self.lookback);
        let end = (rows.end + 1).saturating_sub(self.horizon).max(first);
        first..end
    }

    pub fn window_count(&self, seg: Segment) -> usize {
        self.target_starts(seg).len()
    }

    /// Batches over a segment. With `shuffle = Some(seed)` the window order is
    /// a seeded permutation; otherwise windows come in chronological order.
    /// The final short batch is kept.
    pub fn windows(&self, seg: Segment, batch_size: usize, shuffle: Option<u64>) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = self.target_starts(seg).collect();
        if order.is_empty() {
            return Err(Error::Config(format!("{seg:?} segment has no windows")));
        }
        if let Some(seed) = shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        Ok(Batches {
            ds: self,
            order,
            batch_size,
            pos: 0,
        })
    }

    fn slice(&self, start: usize, len: usize, out: &mut Vec<f64>) {
        let n = self.series.channels;
        out.extend_from_slice(&self.series.values[start * n..(start + len) * n]);
    }
}

pub struct Batches<'a> {
    ds: &'a WindowedDataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let starts = self.order[self.pos..end].to_vec();
        self.pos = end;
        let (t, f, n) = (self.ds.lookback, self.ds.horizon, self.ds.series.channels);
        let mut xs = Vec::with_capacity(starts.len() * t * n);
        let mut ys = Vec::with_capacity(starts.len() * f * n);
        for &s in &starts {
            self.ds.slice(s - t, t, &mut xs);
            self.ds.slice(s, f, &mut ys);
        }
        let b = starts.len();
        Some(Batch {
            x: Tensor::new(vec![b, t, n], xs).expect("window values are finite"),
            y: Tensor::new(vec![b, f, n], ys).expect("window values are finite"),
            starts,
        })
    }
}
