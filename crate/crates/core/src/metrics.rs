//! Competition scoring and the MSE-vs-std diagnostic.
//!
//! Squared errors are accumulated as exact integer sums per (horizon,
//! channel) before any division, so every float in a [`ScoreReport`] is a
//! single quotient of integers. That makes scores independent of test order
//! and of how the work is split across threads.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{HeadingQuadrant, MovieTensor, CHANNELS, HEADINGS, SPEED_CHANNELS, VOLUME_CHANNELS};
use crate::static_graph::StaticTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mse_all: f64,
    pub mse_volume: f64,
    pub mse_speed: f64,
    pub per_channel: [f64; CHANNELS],
    pub per_horizon: Vec<f64>,
    pub n_tests: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Mask multiplies both prediction and ground truth.
    Both,
    /// Mask multiplies the prediction only.
    PredOnly,
}

impl FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(MaskMode::Both),
            "pred-only" | "pred_only" => Ok(MaskMode::PredOnly),
            _ => Err(Error::invalid(format!("unknown mask mode `{s}`"))),
        }
    }
}

/// Binary spatial mask broadcast over frames and channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    values: Vec<u8>,
    pub mode: MaskMode,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, values: Vec<u8>, mode: MaskMode) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Mask { rows, cols, values, mode })
    }

    pub fn ones(rows: usize, cols: usize, mode: MaskMode) -> Self {
        Mask { rows, cols, values: vec![1; rows * cols], mode }
    }

    pub fn zeros(rows: usize, cols: usize, mode: MaskMode) -> Self {
        Mask { rows, cols, values: vec![0; rows * cols], mode }
    }

    pub fn with_mode(mut self, mode: MaskMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.cols + col]
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// 1 wherever the static map shows road density or any connectivity bit.
pub fn road_mask(st: &StaticTensor) -> Mask {
    let plane = st.rows() * st.cols();
    let values = (0..plane)
        .map(|i| (0..9).any(|ch| st.data()[ch * plane + i] != 0) as u8)
        .collect();
    Mask {
        rows: st.rows(),
        cols: st.cols(),
        values,
        mode: MaskMode::Both,
    }
}

fn check_pair(pred: &[MovieTensor], truth: &[MovieTensor]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::invalid("no tests to score"));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![truth.len()],
            actual: vec![pred.len()],
        });
    }
    let shape = truth[0].shape();
    for (p, t) in pred.iter().zip(truth) {
        if t.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        if p.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: p.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Per-(frame, channel) sums of squared errors.
#[derive(Debug, Clone, PartialEq, Eq)]
struct SseTable {
    frames: usize,
    sse: Vec<[u64; CHANNELS]>,
}

impl SseTable {
    fn zeros(frames: usize) -> Self {
        SseTable {
            frames,
            sse: vec![[0; CHANNELS]; frames],
        }
    }

    fn add(mut self, other: SseTable) -> Self {
        for (a, b) in self.sse.iter_mut().zip(other.sse) {
            for c in 0..CHANNELS {
                a[c] += b[c];
            }
        }
        self
    }
}

fn sse_of(p: &MovieTensor, t: &MovieTensor, mask: Option<&Mask>) -> SseTable {
    let mut table = SseTable::zeros(p.frames());
    for f in 0..p.frames() {
        let acc = &mut table.sse[f];
        let pf = p.frame(f);
        let tf = t.frame(f);
        for (px, (pp, tp)) in pf.chunks_exact(CHANNELS).zip(tf.chunks_exact(CHANNELS)).enumerate() {
            let (keep_pred, keep_truth) = match mask {
                None => (true, true),
                Some(m) => {
                    let on = m.values[px] == 1;
                    match m.mode {
                        MaskMode::Both => (on, on),
                        MaskMode::PredOnly => (on, true),
                    }
                }
            };
            for c in 0..CHANNELS {
                let a = if keep_pred { pp[c] as i32 } else { 0 };
                let b = if keep_truth { tp[c] as i32 } else { 0 };
                acc[c] += ((a - b) * (a - b)) as u64;
            }
        }
    }
    table
}

fn report(table: &SseTable, n_tests: usize, cells: usize) -> ScoreReport {
    let per_slice = (n_tests * table.frames * cells) as f64;
    let mut per_channel = [0.0; CHANNELS];
    for (c, pc) in per_channel.iter_mut().enumerate() {
        *pc = table.sse.iter().map(|row| row[c]).sum::<u64>() as f64 / per_slice;
    }
    let group = |chs: [usize; 4]| -> u64 { table.sse.iter().map(|row| chs.iter().map(|&c| row[c]).sum::<u64>()).sum() };
    let vol = group(VOLUME_CHANNELS);
    let speed = group(SPEED_CHANNELS);
    let per_horizon = table
        .sse
        .iter()
        .map(|row| row.iter().sum::<u64>() as f64 / (n_tests * cells * CHANNELS) as f64)
        .collect();
    ScoreReport {
        mse_all: (vol + speed) as f64 / (per_slice * CHANNELS as f64),
        mse_volume: vol as f64 / (per_slice * 4.0),
        mse_speed: speed as f64 / (per_slice * 4.0),
        per_channel,
        per_horizon,
        n_tests,
    }
}

fn score(pred: &[MovieTensor], truth: &[MovieTensor], mask: Option<&Mask>) -> Result<ScoreReport> {
    check_pair(pred, truth)?;
    let frames = truth[0].frames();
    let cells = truth[0].rows() * truth[0].cols();
    if let Some(m) = mask {
        if m.rows != truth[0].rows() || m.cols != truth[0].cols() {
            return Err(Error::ShapeMismatch {
                expected: vec![truth[0].rows(), truth[0].cols()],
                actual: vec![m.rows, m.cols],
            });
        }
    }
    let table = pred
        .par_iter()
        .zip(truth)
        .map(|(p, t)| sse_of(p, t, mask))
        .reduce(|| SseTable::zeros(frames), SseTable::add);
    Ok(report(&table, pred.len(), cells))
}

/// Pooled mean squared error over all elements of all tests.
pub fn mse(pred: &[MovieTensor], truth: &[MovieTensor]) -> Result<ScoreReport> {
    score(pred, truth, None)
}

/// MSE after zeroing masked-out cells; the denominator stays all elements.
pub fn masked_mse(pred: &[MovieTensor], truth: &[MovieTensor], mask: &Mask) -> Result<ScoreReport> {
    score(pred, truth, Some(mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Volume,
    Speed,
}

impl ChannelKind {
    pub fn channel(self, heading: HeadingQuadrant) -> usize {
        match self {
            ChannelKind::Volume => heading.volume_channel(),
            ChannelKind::Speed => heading.speed_channel(),
        }
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" | "vol" => Ok(ChannelKind::Volume),
            "speed" => Ok(ChannelKind::Speed),
            _ => Err(Error::invalid(format!("unknown channel kind `{s}`"))),
        }
    }
}

/// Ground-truth std and prediction MSE of one directional pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMseStd {
    pub row: usize,
    pub col: usize,
    pub heading: HeadingQuadrant,
    pub std: f64,
    pub mse: f64,
}

/// Population mean and std from exact integer moments.
fn moments(n: u64, sum: u64, sumsq: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let num = n as i128 * sumsq as i128 - (sum as i128) * (sum as i128);
    let var = num.max(0) as f64 / (n as f64 * n as f64);
    (sum as f64 / n as f64, var.sqrt())
}

/// Per directional pixel: std of the selected channel over all input and
/// truth frames, and MSE of the prediction over the truth frames.
pub fn pixel_mse_std(
    pred: &[MovieTensor],
    inputs: &[MovieTensor],
    truth: &[MovieTensor],
    kind: ChannelKind,
) -> Result<Vec<PixelMseStd>> {
    check_pair(pred, truth)?;
    if inputs.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![truth.len()],
            actual: vec![inputs.len()],
        });
    }
    let (rows, cols) = (truth[0].rows(), truth[0].cols());
    if inputs.iter().any(|m| m.rows() != rows || m.cols() != cols) {
        return Err(Error::invalid("input and truth grids differ"));
    }
    let rows_out: Vec<Vec<PixelMseStd>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(cols * HEADINGS);
            for c in 0..cols {
                for q in HeadingQuadrant::ALL {
                    let ch = kind.channel(q);
                    let (mut n, mut sum, mut sumsq, mut sse, mut m) = (0u64, 0u64, 0u64, 0u64, 0u64);
                    for ((inp, t), p) in inputs.iter().zip(truth).zip(pred) {
                        for f in 0..inp.frames() {
                            let v = inp.get(f, r, c, ch) as u64;
                            n += 1;
                            sum += v;
                            sumsq += v * v;
                        }
                        for f in 0..t.frames() {
                            let v = t.get(f, r, c, ch) as u64;
                            n += 1;
                            sum += v;
                            sumsq += v * v;
                            let d = p.get(f, r, c, ch) as i64 - v as i64;
                            sse += (d * d) as u64;
                            m += 1;
                        }
                    }
                    let (_, std) = moments(n, sum, sumsq);
                    out.push(PixelMseStd {
                        row: r,
                        col: c,
                        heading: q,
                        std,
                        mse: sse as f64 / m as f64,
                    });
                }
            }
            out
        })
        .collect();
    Ok(rows_out.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdBinReport {
    pub bin_width: f64,
    /// `counts.len() + 1` edges; bin `k` is `[edges[k], edges[k + 1])`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean_mse: Vec<f64>,
    pub summed_mse: Vec<f64>,
    pub cumulative_summed_mse: Vec<f64>,
}

impl StdBinReport {
    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_summed_mse(&self) -> f64 {
        self.cumulative_summed_mse.last().copied().unwrap_or(0.0)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_lo", "bin_hi", "count", "mean_mse", "summed_mse", "cumulative_summed_mse"])?;
        for k in 0..self.counts.len() {
            out.write_record([
                self.bin_edges[k].to_string(),
                self.bin_edges[k + 1].to_string(),
                self.counts[k].to_string(),
                self.mean_mse[k].to_string(),
                self.summed_mse[k].to_string(),
                self.cumulative_summed_mse[k].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Bin per-pixel `(std, mse)` pairs into `[k*w, (k+1)*w)` std bins.
pub fn bin_by_std(pixels: &[PixelMseStd], bin_width: f64) -> Result<StdBinReport> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::invalid("bin width must be finite and > 0"));
    }
    let bin = |std: f64| (std / bin_width).floor() as usize;
    let n_bins = pixels.iter().map(|p| bin(p.std)).max().unwrap_or(0) + 1;
    let mut counts = vec![0u64; n_bins];
    let mut summed = vec![0f64; n_bins];
    for p in pixels {
        let k = bin(p.std);
        counts[k] += 1;
        summed[k] += p.mse;
    }
    let mean_mse = counts
        .iter()
        .zip(&summed)
        .map(|(&n, &s)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    let cumulative = summed
        .iter()
        .scan(0.0, |acc, &s| {
            *acc += s;
            Some(*acc)
        })
        .collect();
    Ok(StdBinReport {
        bin_width,
        bin_edges: (0..=n_bins).map(|k| k as f64 * bin_width).collect(),
        counts,
        mean_mse,
        summed_mse: summed,
        cumulative_summed_mse: cumulative,
    })
}

pub fn mse_vs_std(
    pred: &[MovieTensor],
    inputs: &[MovieTensor],
    truth: &[MovieTensor],
    kind: ChannelKind,
    bin_width: f64,
) -> Result<StdBinReport> {
    bin_by_std(&pixel_mse_std(pred, inputs, truth, kind)?, bin_width)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelStat {
    pub row: usize,
    pub col: usize,
    pub heading: HeadingQuadrant,
    pub vol_mean: f64,
    pub vol_std: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
}

/// Mean and population std of volume and speed per directional pixel, over
/// every frame of every tensor given.
pub fn pixel_stats(movies: &[MovieTensor]) -> Result<Vec<PixelStat>> {
    let first = movies.first().ok_or_else(|| Error::invalid("no tensors given"))?;
    let (rows, cols) = (first.rows(), first.cols());
    if movies.iter().any(|m| !m.same_grid(first)) {
        return Err(Error::invalid("tensors have different grids"));
    }
    let per_row: Vec<Vec<PixelStat>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(cols * HEADINGS);
            for c in 0..cols {
                for q in HeadingQuadrant::ALL {
                    let mut acc = [(0u64, 0u64); 2];
                    let mut n = 0u64;
                    for m in movies {
                        for f in 0..m.frames() {
                            n += 1;
                            for (k, ch) in [q.volume_channel(), q.speed_channel()].into_iter().enumerate() {
                                let v = m.get(f, r, c, ch) as u64;
                                acc[k].0 += v;
                                acc[k].1 += v * v;
                            }
                        }
                    }
                    let (vol_mean, vol_std) = moments(n, acc[0].0, acc[0].1);
                    let (speed_mean, speed_std) = moments(n, acc[1].0, acc[1].1);
                    out.push(PixelStat {
                        row: r,
                        col: c,
                        heading: q,
                        vol_mean,
                        vol_std,
                        speed_mean,
                        speed_std,
                    });
                }
            }
            out
        })
        .collect();
    Ok(per_row.into_iter().flatten().collect())
}

pub fn write_pixel_stats_csv<W: std::io::Write>(w: W, stats: &[PixelStat]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in stats {
        out.serialize(s)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
