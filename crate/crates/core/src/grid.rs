//! Grid geometry, channel layout, time discretization and the dense
//! movie tensor shared by every other module.
//!
//! A city is a `rows x cols` grid of cells of `0.001` degrees on each side.
//! Row 0 is the northernmost band, column 0 the westernmost. Each cell carries
//! 8 channels per 5-minute frame: one (volume, speed) pair per heading quadrant.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CELL_SIZE_DEG: f64 = 0.001;
pub const BINS_PER_DAY: usize = 288;
pub const BIN_MINUTES: usize = 5;
pub const CHANNELS: usize = 8;
pub const HEADINGS: usize = 4;
pub const DEFAULT_ROWS: usize = 495;
pub const DEFAULT_COLS: usize = 436;

/// Volume channel indices, one per heading quadrant.
pub const VOLUME_CHANNELS: [usize; 4] = [0, 2, 4, 6];
/// Speed channel indices, one per heading quadrant.
pub const SPEED_CHANNELS: [usize; 4] = [1, 3, 5, 7];

/// Per-city grid and encoding configuration, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityConfig {
    pub name: String,
    pub lat_min: f64,
    pub lon_min: f64,
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default = "default_bins_per_day")]
    pub bins_per_day: usize,
    #[serde(default = "default_bin_minutes")]
    pub bin_minutes: usize,
    #[serde(default = "default_volume_cap")]
    pub volume_cap: u32,
    #[serde(default = "default_speed_cap")]
    pub speed_cap: f64,
    #[serde(default)]
    pub privacy_threshold: u32,
    #[serde(default)]
    pub rotate_90: bool,
}

fn default_rows() -> usize {
    DEFAULT_ROWS
}
fn default_cols() -> usize {
    DEFAULT_COLS
}
fn default_cell_size() -> f64 {
    CELL_SIZE_DEG
}
fn default_bins_per_day() -> usize {
    BINS_PER_DAY
}
fn default_bin_minutes() -> usize {
    BIN_MINUTES
}
fn default_volume_cap() -> u32 {
    255
}
fn default_speed_cap() -> f64 {
    120.0
}

impl CityConfig {
    /// A config on the default 495 x 436 grid with default caps.
    pub fn new(name: impl Into<String>, lat_min: f64, lon_min: f64) -> Self {
        Self::with_grid(name, lat_min, lon_min, DEFAULT_ROWS, DEFAULT_COLS)
    }

    pub fn with_grid(
        name: impl Into<String>,
        lat_min: f64,
        lon_min: f64,
        rows: usize,
        cols: usize,
    ) -> Self {
        CityConfig {
            name: name.into(),
            lat_min,
            lon_min,
            rows,
            cols,
            cell_size: CELL_SIZE_DEG,
            bins_per_day: BINS_PER_DAY,
            bin_minutes: BIN_MINUTES,
            volume_cap: default_volume_cap(),
            speed_cap: default_speed_cap(),
            privacy_threshold: 0,
            rotate_90: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("grid must have rows > 0 and cols > 0"));
        }
        if self.bins_per_day != BINS_PER_DAY || self.bin_minutes != BIN_MINUTES {
            return Err(Error::invalid(format!(
                "time discretization is fixed at {BINS_PER_DAY} bins of {BIN_MINUTES} minutes"
            )));
        }
        if (self.cell_size - CELL_SIZE_DEG).abs() > 1e-12 {
            return Err(Error::invalid("cell_size is fixed at 0.001 degrees"));
        }
        if self.volume_cap < 1 {
            return Err(Error::invalid("volume_cap must be >= 1"));
        }
        if !(self.speed_cap.is_finite() && self.speed_cap > 0.0) {
            return Err(Error::invalid("speed_cap must be finite and > 0"));
        }
        if !(self.lat_min.is_finite() && self.lon_min.is_finite()) {
            return Err(Error::invalid("grid anchor must be finite"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CityConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Number of latitude bands covered by the geographic box. With
    /// `rotate_90` the tensor's rows come from longitude bands instead.
    fn geo_extent(&self) -> (usize, usize) {
        if self.rotate_90 {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    pub fn lat_max(&self) -> f64 {
        self.lat_min + self.geo_extent().0 as f64 * self.cell_size
    }

    pub fn lon_max(&self) -> f64 {
        self.lon_min + self.geo_extent().1 as f64 * self.cell_size
    }

    pub fn directional_pixels(&self) -> usize {
        self.rows * self.cols * HEADINGS
    }
}

/// One of four 90 degree heading sectors, each owning a (volume, speed) channel pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadingQuadrant {
    NE,
    SE,
    SW,
    NW,
}

impl HeadingQuadrant {
    pub const ALL: [HeadingQuadrant; 4] = [
        HeadingQuadrant::NE,
        HeadingQuadrant::SE,
        HeadingQuadrant::SW,
        HeadingQuadrant::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn volume_channel(self) -> usize {
        2 * self.index()
    }

    pub fn speed_channel(self) -> usize {
        2 * self.index() + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadingQuadrant::NE => "NE",
            HeadingQuadrant::SE => "SE",
            HeadingQuadrant::SW => "SW",
            HeadingQuadrant::NW => "NW",
        }
    }
}

impl fmt::Display for HeadingQuadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadingQuadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NE" | "0" => Ok(HeadingQuadrant::NE),
            "SE" | "1" => Ok(HeadingQuadrant::SE),
            "SW" | "2" => Ok(HeadingQuadrant::SW),
            "NW" | "3" => Ok(HeadingQuadrant::NW),
            other => Err(Error::invalid(format!("unknown heading `{other}`"))),
        }
    }
}

/// A (row, col, heading) triple, treated as a virtual volume/speed detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectionalPixel {
    pub row: usize,
    pub col: usize,
    pub heading: HeadingQuadrant,
}

impl DirectionalPixel {
    pub fn new(row: usize, col: usize, heading: HeadingQuadrant) -> Self {
        DirectionalPixel { row, col, heading }
    }
}

/// Grid cell of a probe, or `None` when it falls outside the city box.
pub fn cell_of(lat: f64, lon: f64, cfg: &CityConfig) -> Option<(usize, usize)> {
    let (geo_rows, geo_cols) = cfg.geo_extent();
    let r = ((cfg.lat_max() - lat) / cfg.cell_size).floor();
    let c = ((lon - cfg.lon_min) / cfg.cell_size).floor();
    // NaN fails both comparisons.
    if !(r >= 0.0 && c >= 0.0 && r < geo_rows as f64 && c < geo_cols as f64) {
        return None;
    }
    let (r, c) = (r as usize, c as usize);
    if cfg.rotate_90 {
        Some((c, r))
    } else {
        Some((r, c))
    }
}

/// Geographic bounding box `(lat_lo, lat_hi, lon_lo, lon_hi)` of a grid cell.
pub fn cell_bounds(row: usize, col: usize, cfg: &CityConfig) -> (f64, f64, f64, f64) {
    let (geo_r, geo_c) = if cfg.rotate_90 { (col, row) } else { (row, col) };
    let lat_hi = cfg.lat_max() - geo_r as f64 * cfg.cell_size;
    let lon_lo = cfg.lon_min + geo_c as f64 * cfg.cell_size;
    (lat_hi - cfg.cell_size, lat_hi, lon_lo, lon_lo + cfg.cell_size)
}

/// Heading sector with half-open intervals: `[0, 90)` is NE, `[90, 180)` SE and so on.
pub fn quadrant_of(heading: f64) -> Result<HeadingQuadrant> {
    if !heading.is_finite() {
        return Err(Error::invalid(format!("non-finite heading {heading}")));
    }
    let h = heading.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs.
    let q = ((h / 90.0).floor() as usize) % 4;
    Ok(HeadingQuadrant::ALL[q])
}

/// Five-minute frame index of a local wall-clock timestamp.
pub fn bin_of(ts: &NaiveDateTime) -> usize {
    bin_of_minutes(ts.hour() as usize * 60 + ts.minute() as usize)
}

pub fn bin_of_minutes(minutes_since_midnight: usize) -> usize {
    minutes_since_midnight / BIN_MINUTES
}

/// Round to nearest with ties away from zero, then clamp into `[lo, hi]`.
pub(crate) fn round_clamp(x: f64, lo: u8, hi: u8) -> u8 {
    x.round().clamp(lo as f64, hi as f64) as u8
}

/// Dense `(frames, rows, cols, 8)` uint8 traffic tensor in row-major order.
#[derive(Clone, PartialEq, Eq)]
pub struct MovieTensor {
    frames: usize,
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl fmt::Debug for MovieTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MovieTensor")
            .field("shape", &self.shape())
            .finish_non_exhaustive()
    }
}

impl MovieTensor {
    pub fn zeros(frames: usize, rows: usize, cols: usize) -> Self {
        MovieTensor {
            frames,
            rows,
            cols,
            data: vec![0; frames * rows * cols * CHANNELS],
        }
    }

    pub fn from_raw(frames: usize, rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        let expected = frames * rows * cols * CHANNELS;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "movie payload has {} bytes, shape ({frames}, {rows}, {cols}, 8) needs {expected}",
                data.len()
            )));
        }
        Ok(MovieTensor {
            frames,
            rows,
            cols,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.rows, self.cols, CHANNELS]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn frame_len(&self) -> usize {
        self.rows * self.cols * CHANNELS
    }

    #[inline]
    pub fn offset(&self, frame: usize, row: usize, col: usize, channel: usize) -> usize {
        debug_assert!(frame < self.frames && row < self.rows && col < self.cols && channel < CHANNELS);
        ((frame * self.rows + row) * self.cols + col) * CHANNELS + channel
    }

    #[inline]
    pub fn get(&self, frame: usize, row: usize, col: usize, channel: usize) -> u8 {
        self.data[self.offset(frame, row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, row: usize, col: usize, channel: usize, value: u8) {
        let i = self.offset(frame, row, col, channel);
        self.data[i] = value;
    }

    pub fn frame(&self, frame: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[frame * n..(frame + 1) * n]
    }

    /// Copy the given frames, in order, into a new tensor.
    pub fn select_frames(&self, frames: &[usize]) -> Result<MovieTensor> {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(frames.len() * n);
        for &f in frames {
            if f >= self.frames {
                return Err(Error::invalid(format!(
                    "frame {f} out of range for a {}-frame tensor",
                    self.frames
                )));
            }
            data.extend_from_slice(self.frame(f));
        }
        MovieTensor::from_raw(frames.len(), self.rows, self.cols, data)
    }

    pub fn same_grid(&self, other: &MovieTensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}
