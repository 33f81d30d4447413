//! Deterministic synthetic data: probe streams, busy days with jams, noisy
//! cities and test batches. Used by tests, benchmarks and the `synth` command.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{CityConfig, DirectionalPixel, MovieTensor, BINS_PER_DAY, CHANNELS, HEADINGS};
use crate::ingest::ProbeRecord;
use crate::slots::{INPUT_FRAMES, TRUTH_OFFSETS};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform probes over the grid extent plus a 5% margin on each side, so a
/// few land out of bounds. Headings include exact quadrant boundaries.
pub fn random_probes(cfg: &CityConfig, date: NaiveDate, n: usize, seed: u64) -> Vec<ProbeRecord> {
    let mut r = rng(seed);
    let (h, w) = if cfg.rotate_90 { (cfg.cols, cfg.rows) } else { (cfg.rows, cfg.cols) };
    let lat_span = h as f64 * cfg.cell_size;
    let lon_span = w as f64 * cfg.cell_size;
    let midnight = date.and_hms_opt(0, 0, 0).expect("valid midnight");
    (0..n)
        .map(|_| {
            let lat = cfg.lat_min + lat_span * r.gen_range(-0.05..1.05);
            let lon = cfg.lon_min + lon_span * r.gen_range(-0.05..1.05);
            let heading = if r.gen_bool(0.05) {
                [0.0, 90.0, 180.0, 270.0][r.gen_range(0..4)]
            } else {
                r.gen_range(0.0..360.0)
            };
            ProbeRecord {
                lat,
                lon,
                timestamp: midnight + Duration::seconds(r.gen_range(0..86_400)),
                speed: (r.gen_range(0.0..150.0_f64) * 10.0).round() / 10.0,
                heading,
            }
        })
        .collect()
}

/// A day where every directional pixel of road row `road_row` carries a
/// steady volume of 20 and speed of 100. Off-road pixels stay zero.
pub fn busy_day(rows: usize, cols: usize, road_row: usize) -> MovieTensor {
    let mut day = MovieTensor::zeros(BINS_PER_DAY, rows, cols);
    for f in 0..BINS_PER_DAY {
        for c in 0..cols {
            for ch in 0..CHANNELS {
                day.set(f, road_row, c, ch, if ch % 2 == 0 { 20 } else { 100 });
            }
        }
    }
    day
}

/// Double the volume and halve the speed of one directional pixel for
/// `duration` bins starting at `start_bin`.
pub fn inject_jam(day: &mut MovieTensor, p: DirectionalPixel, start_bin: usize, duration: usize) {
    let (vc, sc) = (p.heading.volume_channel(), p.heading.speed_channel());
    for f in start_bin..start_bin + duration {
        let v = day.get(f, p.row, p.col, vc);
        let s = day.get(f, p.row, p.col, sc);
        day.set(f, p.row, p.col, vc, v.saturating_mul(2));
        day.set(f, p.row, p.col, sc, s / 2);
    }
}

pub fn random_movie(r: &mut impl Rng, frames: usize, rows: usize, cols: usize) -> MovieTensor {
    let mut m = MovieTensor::zeros(frames, rows, cols);
    r.fill(m.data_mut());
    m
}

/// Prediction/truth batches for a city whose road cells are marked in the
/// returned `road` vector (row-major, length `rows * cols`). Off-road truth
/// carries small noise in `0..=noise`; off-road predictions carry noise of
/// the same size, so masking changes the score in a computable way.
pub struct NoisyCity {
    pub rows: usize,
    pub cols: usize,
    pub road: Vec<bool>,
    pub pred: Vec<MovieTensor>,
    pub truth: Vec<MovieTensor>,
}

pub fn noisy_city(rows: usize, cols: usize, n_tests: usize, noise: u8, seed: u64) -> NoisyCity {
    let mut r = rng(seed);
    let road: Vec<bool> = (0..rows * cols).map(|_| r.gen_bool(0.3)).collect();
    let make = |r: &mut ChaCha8Rng| {
        let mut m = MovieTensor::zeros(TRUTH_OFFSETS.len(), rows, cols);
        for (i, px) in m.data_mut().chunks_exact_mut(CHANNELS).enumerate() {
            let on = road[i % (rows * cols)];
            for v in px {
                *v = if on { r.gen() } else { r.gen_range(0..=noise) };
            }
        }
        m
    };
    let pred = (0..n_tests).map(|_| make(&mut r)).collect();
    let truth = (0..n_tests).map(|_| make(&mut r)).collect();
    NoisyCity {
        rows,
        cols,
        road,
        pred,
        truth,
    }
}

/// Inputs, truth and predictions where the left half of the grid is
/// near-constant and the right half swings widely, giving two clusters of
/// per-pixel std.
pub struct StdBatch {
    pub inputs: Vec<MovieTensor>,
    pub truth: Vec<MovieTensor>,
    pub pred: Vec<MovieTensor>,
}

pub fn two_population_batch(rows: usize, cols: usize, n_tests: usize, seed: u64) -> StdBatch {
    let mut r = rng(seed);
    let fill = |frames: usize, r: &mut ChaCha8Rng| {
        let mut m = MovieTensor::zeros(frames, rows, cols);
        for f in 0..frames {
            for row in 0..rows {
                for c in 0..cols {
                    for ch in 0..CHANNELS {
                        let v = if c < cols / 2 { r.gen_range(48..=52) } else { r.gen_range(0..=255) };
                        m.set(f, row, c, ch, v);
                    }
                }
            }
        }
        m
    };
    let inputs = (0..n_tests).map(|_| fill(INPUT_FRAMES, &mut r)).collect();
    let truth = (0..n_tests).map(|_| fill(TRUTH_OFFSETS.len(), &mut r)).collect();
    let pred = (0..n_tests).map(|_| fill(TRUTH_OFFSETS.len(), &mut r)).collect();
    StdBatch { inputs, truth, pred }
}

/// Twelve input frames with every element equal to `base + step * t`.
pub fn ramp_input(rows: usize, cols: usize, base: u8, step: u8) -> MovieTensor {
    let per = rows * cols * CHANNELS;
    let data = (0..INPUT_FRAMES)
        .flat_map(|t| std::iter::repeat_n(base.saturating_add(step.saturating_mul(t as u8)), per))
        .collect();
    MovieTensor::from_raw(INPUT_FRAMES, rows, cols, data).expect("sizes agree")
}

/// Number of directional pixels on a `rows x cols` grid.
pub fn directional_pixel_count(rows: usize, cols: usize) -> usize {
    rows * cols * HEADINGS
}

/// Midnight of `date`, for building timestamps by offset.
pub fn midnight(date: NaiveDate) -> NaiveDateTime {
    date.and_hms_opt(0, 0, 0).expect("valid midnight")
}
