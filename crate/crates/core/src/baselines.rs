//! Reference predictors. Each maps a `(12, rows, cols, 8)` input to a
//! `(6, rows, cols, 8)` prediction.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{round_clamp, MovieTensor, CHANNELS};
use crate::slots::{INPUT_FRAMES, TRUTH_OFFSETS};

pub const HORIZONS: usize = TRUTH_OFFSETS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    NaiveAverage,
    Zeros,
    Persistence,
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive-average" => Ok(Baseline::NaiveAverage),
            "zeros" => Ok(Baseline::Zeros),
            "persistence" => Ok(Baseline::Persistence),
            _ => Err(Error::invalid(format!("unknown baseline `{s}`"))),
        }
    }
}

impl Baseline {
    pub fn predict(self, input: &MovieTensor) -> Result<MovieTensor> {
        match self {
            Baseline::NaiveAverage => naive_average(input),
            Baseline::Zeros => zeros(input),
            Baseline::Persistence => persistence(input),
        }
    }
}

fn check_input(input: &MovieTensor) -> Result<()> {
    if input.frames() != INPUT_FRAMES {
        return Err(Error::ShapeMismatch {
            expected: vec![INPUT_FRAMES, input.rows(), input.cols(), CHANNELS],
            actual: input.shape().to_vec(),
        });
    }
    Ok(())
}

fn repeat_frame(frame: &[u8], rows: usize, cols: usize) -> MovieTensor {
    MovieTensor::from_raw(HORIZONS, rows, cols, frame.repeat(HORIZONS)).expect("frame matches grid")
}

/// Per element mean of the 12 input frames, rounded half up, for all horizons.
pub fn naive_average(input: &MovieTensor) -> Result<MovieTensor> {
    check_input(input)?;
    let n = input.frame_len();
    let mut sums = vec![0u32; n];
    for f in 0..INPUT_FRAMES {
        for (s, &v) in sums.iter_mut().zip(input.frame(f)) {
            *s += v as u32;
        }
    }
    let mean: Vec<u8> = sums
        .into_iter()
        .map(|s| round_clamp(s as f64 / INPUT_FRAMES as f64, 0, 255))
        .collect();
    Ok(repeat_frame(&mean, input.rows(), input.cols()))
}

pub fn zeros(input: &MovieTensor) -> Result<MovieTensor> {
    check_input(input)?;
    Ok(MovieTensor::zeros(HORIZONS, input.rows(), input.cols()))
}

/// Repeat the last input frame.
pub fn persistence(input: &MovieTensor) -> Result<MovieTensor> {
    check_input(input)?;
    Ok(repeat_frame(input.frame(INPUT_FRAMES - 1), input.rows(), input.cols()))
}
