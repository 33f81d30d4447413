//! Daily volume curves and per-pixel time series, written as CSV.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{DirectionalPixel, MovieTensor, BINS_PER_DAY, CHANNELS, VOLUME_CHANNELS};

/// Per-bin sum of all four volume channels over the grid, averaged over days.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DailyVolumeCurve {
    pub label: String,
    pub n_days: usize,
    pub values: Vec<f64>,
}

/// Sum of the volume channels of every frame of one day.
pub fn day_volume_sums(day: &MovieTensor) -> Result<Vec<u64>> {
    if day.frames() != BINS_PER_DAY {
        return Err(Error::invalid(format!(
            "expected a {BINS_PER_DAY}-frame day, got {} frames",
            day.frames()
        )));
    }
    Ok((0..BINS_PER_DAY)
        .map(|f| {
            day.frame(f)
                .chunks_exact(CHANNELS)
                .map(|px| VOLUME_CHANNELS.iter().map(|&c| px[c] as u64).sum::<u64>())
                .sum()
        })
        .collect())
}

/// Fold days one at a time so callers can stream day files from disk.
#[derive(Debug, Clone)]
pub struct VolumeCurveBuilder {
    sums: Vec<u64>,
    n_days: usize,
}

impl Default for VolumeCurveBuilder {
    fn default() -> Self {
        VolumeCurveBuilder {
            sums: vec![0; BINS_PER_DAY],
            n_days: 0,
        }
    }
}

impl VolumeCurveBuilder {
    pub fn add_day(&mut self, day: &MovieTensor) -> Result<()> {
        for (s, v) in self.sums.iter_mut().zip(day_volume_sums(day)?) {
            *s += v;
        }
        self.n_days += 1;
        Ok(())
    }

    pub fn finish(self, label: impl Into<String>) -> Result<DailyVolumeCurve> {
        if self.n_days == 0 {
            return Err(Error::invalid("daily volume curve needs at least one day"));
        }
        let n = self.n_days as f64;
        Ok(DailyVolumeCurve {
            label: label.into(),
            n_days: self.n_days,
            values: self.sums.iter().map(|&s| s as f64 / n).collect(),
        })
    }
}

pub fn daily_volume_curve<'a>(days: impl IntoIterator<Item = &'a MovieTensor>, label: &str) -> Result<DailyVolumeCurve> {
    let mut b = VolumeCurveBuilder::default();
    for d in days {
        b.add_day(d)?;
    }
    b.finish(label)
}

impl DailyVolumeCurve {
    /// Rows of `bin,value,label`; several curves can share one file.
    pub fn write_csv<W: std::io::Write>(&self, w: W, header: bool) -> Result<()> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        if header {
            out.write_record(["bin", "value", "label"])?;
        }
        for (bin, v) in self.values.iter().enumerate() {
            out.write_record([bin.to_string(), v.to_string(), self.label.clone()])?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// One day's series of a directional pixel, or mean/std across days.
#[derive(Debug, Clone, PartialEq)]
pub enum PixelSeries {
    Single { volume: Vec<u8>, speed: Vec<u8> },
    Aggregate {
        n_days: usize,
        volume_mean: Vec<f64>,
        volume_std: Vec<f64>,
        speed_mean: Vec<f64>,
        speed_std: Vec<f64>,
    },
}

pub fn pixel_timeseries(days: &[MovieTensor], p: DirectionalPixel) -> Result<PixelSeries> {
    let first = days.first().ok_or_else(|| Error::invalid("no day tensors given"))?;
    for d in days {
        if p.row >= d.rows() || p.col >= d.cols() {
            return Err(Error::invalid(format!(
                "pixel ({}, {}) outside the {}x{} grid",
                p.row,
                p.col,
                d.rows(),
                d.cols()
            )));
        }
        if d.frames() != first.frames() {
            return Err(Error::invalid("day tensors differ in frame count"));
        }
    }
    let (vc, sc) = (p.heading.volume_channel(), p.heading.speed_channel());
    let frames = first.frames();
    let series = |d: &MovieTensor, ch: usize| -> Vec<u8> { (0..frames).map(|f| d.get(f, p.row, p.col, ch)).collect() };
    if days.len() == 1 {
        return Ok(PixelSeries::Single {
            volume: series(first, vc),
            speed: series(first, sc),
        });
    }
    let stats = |ch: usize| -> (Vec<f64>, Vec<f64>) {
        let all: Vec<Vec<u8>> = days.iter().map(|d| series(d, ch)).collect();
        let n = days.len() as f64;
        (0..frames)
            .map(|f| {
                let m = all.iter().map(|s| s[f] as f64).sum::<f64>() / n;
                let v = all.iter().map(|s| (s[f] as f64 - m).powi(2)).sum::<f64>() / n;
                (m, v.sqrt())
            })
            .unzip()
    };
    let (volume_mean, volume_std) = stats(vc);
    let (speed_mean, speed_std) = stats(sc);
    Ok(PixelSeries::Aggregate {
        n_days: days.len(),
        volume_mean,
        volume_std,
        speed_mean,
        speed_std,
    })
}

impl PixelSeries {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        match self {
            PixelSeries::Single { volume, speed } => {
                out.write_record(["bin", "volume", "speed"])?;
                for (bin, (v, s)) in volume.iter().zip(speed).enumerate() {
                    out.write_record([bin.to_string(), v.to_string(), s.to_string()])?;
                }
            }
            PixelSeries::Aggregate {
                volume_mean,
                volume_std,
                speed_mean,
                speed_std,
                ..
            } => {
                out.write_record(["bin", "volume_mean", "volume_std", "speed_mean", "speed_std"])?;
                for bin in 0..volume_mean.len() {
                    out.write_record([
                        bin.to_string(),
                        volume_mean[bin].to_string(),
                        volume_std[bin].to_string(),
                        speed_mean[bin].to_string(),
                        speed_std[bin].to_string(),
                    ])?;
                }
            }
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
