//! Fixtures shared by the benchmarks.

use chrono::NaiveDate;

use t4c_core::ingest::write_probes_csv;
use t4c_core::{synth, CityConfig, HighResRaster, MovieTensor};

pub fn bench_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 10).expect("valid date")
}

/// Default-size city grid.
pub fn bench_city() -> CityConfig {
    CityConfig::new("bench", 52.0, 13.0)
}

/// Probe CSV text, header included.
pub fn probe_csv(cfg: &CityConfig, n: usize, seed: u64) -> Vec<u8> {
    let probes = synth::random_probes(cfg, bench_date(), n, seed);
    let mut out = Vec::with_capacity(n * 64);
    write_probes_csv(&mut out, &probes).expect("writing to memory");
    out
}

/// `n` random prediction/truth pairs of shape `(6, rows, cols, 8)`.
pub fn score_batch(n: usize, rows: usize, cols: usize, seed: u64) -> (Vec<MovieTensor>, Vec<MovieTensor>) {
    let mut r = synth::rng(seed);
    let pred = (0..n).map(|_| synth::random_movie(&mut r, 6, rows, cols)).collect();
    let truth = (0..n).map(|_| synth::random_movie(&mut r, 6, rows, cols)).collect();
    (pred, truth)
}

/// A street grid: a road every 7th pixel row and column, plus a diagonal.
pub fn street_raster(rows: usize, cols: usize) -> HighResRaster {
    let mut r = HighResRaster::blank(rows, cols);
    for y in 0..rows {
        for x in 0..cols {
            if y % 7 == 0 || x % 7 == 0 || y == x {
                r.set(y, x, 0);
            }
        }
    }
    r
}
