//! Jam-like outlier detection on single directional pixels, outlier test
//! generation and single-pixel masked scoring.
//!
//! A bin is a candidate when its volume is above the pixel's daily upper
//! volume quantile, its speed below the daily lower speed quantile, its
//! volume above a floor and it lies in the daytime window. Maximal runs of
//! candidates become events if they are long enough and stand out against
//! the two hours preceding them.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{HeadingQuadrant, MovieTensor, BINS_PER_DAY, HEADINGS};
use crate::slots::{self, TestSlot, INPUT_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutlierEvent {
    pub row: usize,
    pub col: usize,
    pub heading: HeadingQuadrant,
    pub start_bin: usize,
    pub duration: usize,
}

impl OutlierEvent {
    pub fn bins(&self) -> std::ops::Range<usize> {
        self.start_bin..self.start_bin + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierCriteria {
    pub vol_quantile: f64,
    pub speed_quantile: f64,
    /// Volume must be strictly above this encoded value.
    pub min_volume: u8,
    /// Inclusive first and last bin of the daytime window.
    pub window: (usize, usize),
    pub min_consecutive: usize,
    pub vol_mean_factor: f64,
    pub speed_mean_factor: f64,
    /// Trailing context length in bins.
    pub context_bins: usize,
}

impl Default for OutlierCriteria {
    fn default() -> Self {
        OutlierCriteria {
            vol_quantile: 0.90,
            speed_quantile: 0.05,
            min_volume: 5,
            window: (96, 240),
            min_consecutive: 2,
            vol_mean_factor: 1.5,
            speed_mean_factor: 0.7,
            context_bins: 24,
        }
    }
}

impl OutlierCriteria {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |q: f64| q > 0.0 && q < 1.0;
        if !in_unit(self.vol_quantile) || !in_unit(self.speed_quantile) {
            return Err(Error::invalid("quantiles must lie in (0, 1)"));
        }
        if !(self.vol_mean_factor > 0.0 && self.speed_mean_factor > 0.0) {
            return Err(Error::invalid("mean factors must be > 0"));
        }
        if self.window.0 > self.window.1 || self.window.1 >= BINS_PER_DAY {
            return Err(Error::invalid(format!("bad window {:?}", self.window)));
        }
        if self.min_consecutive == 0 || self.context_bins == 0 {
            return Err(Error::invalid("min_consecutive and context_bins must be >= 1"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let crit: OutlierCriteria = serde_json::from_str(&text)?;
        crit.validate()?;
        Ok(crit)
    }
}

/// Nearest-rank quantile of a uint8 sample: the `ceil(q * n)`-th smallest value.
pub fn nearest_rank(values: &[u8], q: f64) -> u8 {
    let mut hist = [0usize; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    nearest_rank_hist(&hist, values.len(), q)
}

/// Zero-based position of the nearest-rank `q` quantile in a sorted sample of size `n >= 1`.
pub fn nearest_rank_position(n: usize, q: f64) -> usize {
    // the epsilon keeps exact products such as 0.7 * 10 from rounding up a rank
    ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n) - 1
}

fn nearest_rank_hist(hist: &[usize; 256], n: usize, q: f64) -> u8 {
    if n == 0 {
        return 0;
    }
    let rank = nearest_rank_position(n, q) + 1;
    let mut seen = 0;
    for (v, &count) in hist.iter().enumerate() {
        seen += count;
        if seen >= rank {
            return v as u8;
        }
    }
    255
}

/// Per-directional-pixel quantiles of one channel kind, laid out `(rows, cols, 4)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantileTable {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<u8>,
}

impl QuantileTable {
    pub fn get(&self, row: usize, col: usize, heading: HeadingQuadrant) -> u8 {
        self.values[(row * self.cols + col) * HEADINGS + heading.index()]
    }
}

/// Volume and speed quantile tables over the day's frames.
pub fn channel_quantiles(day: &MovieTensor, q: f64) -> (QuantileTable, QuantileTable) {
    let (rows, cols) = (day.rows(), day.cols());
    let mut vol = vec![0u8; rows * cols * HEADINGS];
    let mut speed = vec![0u8; rows * cols * HEADINGS];
    for r in 0..rows {
        for c in 0..cols {
            for h in HeadingQuadrant::ALL {
                let i = (r * cols + c) * HEADINGS + h.index();
                vol[i] = nearest_rank(&series(day, r, c, h.volume_channel()), q);
                speed[i] = nearest_rank(&series(day, r, c, h.speed_channel()), q);
            }
        }
    }
    let table = |values| QuantileTable { rows, cols, values };
    (table(vol), table(speed))
}

fn series(day: &MovieTensor, row: usize, col: usize, channel: usize) -> Vec<u8> {
    (0..day.frames()).map(|f| day.get(f, row, col, channel)).collect()
}

fn mean(xs: &[u8]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
}

/// Events at a single directional pixel given its volume and speed series.
pub fn detect_in_series(volume: &[u8], speed: &[u8], crit: &OutlierCriteria) -> Vec<(usize, usize)> {
    assert_eq!(volume.len(), speed.len());
    let vq = nearest_rank(volume, crit.vol_quantile);
    let sq = nearest_rank(speed, crit.speed_quantile);
    let (lo, hi) = crit.window;
    let flagged = |t: usize| {
        t >= lo && t <= hi && volume[t] > vq && speed[t] < sq && volume[t] > crit.min_volume
    };
    let mut events = Vec::new();
    let mut t = 0;
    while t < volume.len() {
        if !flagged(t) {
            t += 1;
            continue;
        }
        let start = t;
        while t < volume.len() && flagged(t) {
            t += 1;
        }
        let len = t - start;
        if len < crit.min_consecutive {
            continue;
        }
        let ctx = start.saturating_sub(crit.context_bins)..start;
        if ctx.is_empty() {
            continue;
        }
        let run_vol = mean(&volume[start..t]);
        let run_speed = mean(&speed[start..t]);
        let ctx_vol = mean(&volume[ctx.clone()]);
        let ctx_speed = mean(&speed[ctx]);
        if run_vol > crit.vol_mean_factor * ctx_vol && run_speed < crit.speed_mean_factor * ctx_speed {
            events.push((start, len));
        }
    }
    events
}

/// Scan every directional pixel of a full day.
pub fn detect_outliers(day: &MovieTensor, crit: &OutlierCriteria) -> Result<Vec<OutlierEvent>> {
    use rayon::prelude::*;

    crit.validate()?;
    if day.frames() != BINS_PER_DAY {
        return Err(Error::invalid(format!(
            "outlier detection needs a full day, got {} frames",
            day.frames()
        )));
    }
    let per_row: Vec<Vec<OutlierEvent>> = (0..day.rows())
        .into_par_iter()
        .map(|r| {
            let mut found = Vec::new();
            for c in 0..day.cols() {
                for h in HeadingQuadrant::ALL {
                    let vol = series(day, r, c, h.volume_channel());
                    let speed = series(day, r, c, h.speed_channel());
                    for (start_bin, duration) in detect_in_series(&vol, &speed, crit) {
                        found.push(OutlierEvent {
                            row: r,
                            col: c,
                            heading: h,
                            start_bin,
                            duration,
                        });
                    }
                }
            }
            found
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

/// Single-pixel score: MSE over the event pixel's volume and speed channels
/// across all prediction frames, one event per test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierScore {
    pub mse: f64,
    pub n_values: usize,
    pub n_tests: usize,
}

pub fn outlier_mask_score(pred: &[MovieTensor], truth: &[MovieTensor], events: &[OutlierEvent]) -> Result<OutlierScore> {
    if pred.len() != truth.len() || events.len() != truth.len() {
        return Err(Error::invalid(format!(
            "need one event per test: {} predictions, {} truths, {} events",
            pred.len(),
            truth.len(),
            events.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no tests to score"));
    }
    let mut sse = 0u64;
    let mut n = 0usize;
    for ((p, t), e) in pred.iter().zip(truth).zip(events) {
        if p.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                expected: t.shape().to_vec(),
                actual: p.shape().to_vec(),
            });
        }
        if e.row >= t.rows() || e.col >= t.cols() {
            return Err(Error::invalid(format!("event pixel ({}, {}) outside grid", e.row, e.col)));
        }
        for f in 0..t.frames() {
            for ch in [e.heading.volume_channel(), e.heading.speed_channel()] {
                let d = p.get(f, e.row, e.col, ch) as i64 - t.get(f, e.row, e.col, ch) as i64;
                sse += (d * d) as u64;
                n += 1;
            }
        }
    }
    Ok(OutlierScore {
        mse: sse as f64 / n as f64,
        n_values: n,
        n_tests: truth.len(),
    })
}

/// Start bin of the test built for `e`, or `None` when the day is too short
/// on either side.
pub fn outlier_test_start(e: &OutlierEvent) -> Option<usize> {
    let start = e.start_bin.checked_sub(INPUT_FRAMES - 1)?;
    (start + slots::TRUTH_OFFSETS[5] < BINS_PER_DAY).then_some(start)
}

/// Tests whose last input frame is each event's first bin. Events without a
/// full hour of history or a full hour of future are skipped and counted.
pub fn make_outlier_tests(
    city: &str,
    date: NaiveDate,
    day: &MovieTensor,
    events: &[OutlierEvent],
) -> Result<(Vec<TestSlot>, usize)> {
    let mut tests = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for e in events {
        match outlier_test_start(e) {
            Some(start) => tests.push(slots::materialize(city, date, day, start)?),
            None => skipped += 1,
        }
    }
    Ok((tests, skipped))
}

pub fn write_events_csv<W: std::io::Write>(w: W, events: &[OutlierEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "col", "heading", "start_bin", "duration"])?;
    for e in events {
        out.write_record([
            e.row.to_string(),
            e.col.to_string(),
            e.heading.to_string(),
            e.start_bin.to_string(),
            e.duration.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_events_csv<R: std::io::Read>(r: R) -> Result<Vec<OutlierEvent>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
