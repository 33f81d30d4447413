//! Probe aggregation into daily movie tensors.
//!
//! Probes are binned into `(frame, row, col, heading)` slots of a sparse
//! [`DayAccumulator`]. Accumulators built over disjoint shards of the input
//! merge by element-wise addition; speed sums are kept in integer
//! milli-km/h so the merge is exactly associative and every sharding
//! finalizes to the same bytes.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    bin_of, cell_of, quadrant_of, round_clamp, CityConfig, HeadingQuadrant, MovieTensor,
    BINS_PER_DAY, HEADINGS,
};

/// Fixed-point scale of accumulated speeds (units per km/h).
pub const SPEED_SCALE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: NaiveDateTime,
    pub speed: f64,
    pub heading: f64,
}

impl ProbeRecord {
    fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
            && self.speed >= 0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellAccumulator {
    pub count: u32,
    /// Sum of probe speeds in milli-km/h.
    pub speed_sum_milli: u64,
}

impl CellAccumulator {
    pub fn speed_sum(&self) -> f64 {
        self.speed_sum_milli as f64 / SPEED_SCALE
    }

    fn add(&mut self, other: CellAccumulator) {
        self.count += other.count;
        self.speed_sum_milli += other.speed_sum_milli;
    }
}

/// Record tallies; `in_bounds + out_of_bounds + rejected == records` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: u64,
    pub in_bounds: u64,
    pub out_of_bounds: u64,
    pub rejected: u64,
}

impl IngestStats {
    pub fn merge(&mut self, other: &IngestStats) {
        self.records += other.records;
        self.in_bounds += other.in_bounds;
        self.out_of_bounds += other.out_of_bounds;
        self.rejected += other.rejected;
    }
}

/// What happened to a single probe on its way into the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Accepted,
    OutOfBounds,
    Rejected,
}

/// Sparse per-(frame, row, col, heading) probe tallies for one city-day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DayAccumulator {
    rows: usize,
    cols: usize,
    slots: FxHashMap<u64, CellAccumulator>,
    stats: IngestStats,
}

impl DayAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        DayAccumulator {
            rows,
            cols,
            slots: FxHashMap::default(),
            stats: IngestStats::default(),
        }
    }

    pub fn for_city(cfg: &CityConfig) -> Self {
        Self::new(cfg.rows, cfg.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn occupied(&self) -> usize {
        self.slots.len()
    }

    fn key(&self, frame: usize, row: usize, col: usize, heading: HeadingQuadrant) -> u64 {
        (((frame * self.rows + row) * self.cols + col) * HEADINGS + heading.index()) as u64
    }

    fn unkey(&self, key: u64) -> (usize, usize, usize, usize) {
        let k = key as usize;
        let q = k % HEADINGS;
        let k = k / HEADINGS;
        let col = k % self.cols;
        let k = k / self.cols;
        (k / self.rows, k % self.rows, col, q)
    }

    pub fn get(&self, frame: usize, row: usize, col: usize, heading: HeadingQuadrant) -> CellAccumulator {
        self.slots
            .get(&self.key(frame, row, col, heading))
            .copied()
            .unwrap_or_default()
    }

    /// Iterate non-empty slots as `(frame, row, col, heading, cell)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, HeadingQuadrant, CellAccumulator)> + '_ {
        self.slots.iter().map(move |(&k, &cell)| {
            let (f, r, c, q) = self.unkey(k);
            (f, r, c, HeadingQuadrant::ALL[q], cell)
        })
    }

    /// Add one slot's worth of counts directly.
    pub fn add_cell(&mut self, frame: usize, row: usize, col: usize, heading: HeadingQuadrant, cell: CellAccumulator) {
        assert!(frame < BINS_PER_DAY && row < self.rows && col < self.cols);
        if cell.count == 0 {
            return;
        }
        let key = self.key(frame, row, col, heading);
        self.slots.entry(key).or_default().add(cell);
    }

    /// Bin one probe. Probes dated other than `date` (when given) count as out of bounds.
    pub fn add_probe(&mut self, probe: &ProbeRecord, cfg: &CityConfig, date: Option<NaiveDate>) -> ProbeOutcome {
        self.stats.records += 1;
        if !probe.is_valid() {
            self.stats.rejected += 1;
            return ProbeOutcome::Rejected;
        }
        if date.is_some_and(|d| d != probe.timestamp.date()) {
            self.stats.out_of_bounds += 1;
            return ProbeOutcome::OutOfBounds;
        }
        let Some((row, col)) = cell_of(probe.lat, probe.lon, cfg) else {
            self.stats.out_of_bounds += 1;
            return ProbeOutcome::OutOfBounds;
        };
        // heading is finite, checked above
        let heading = quadrant_of(probe.heading).expect("finite heading");
        let frame = bin_of(&probe.timestamp);
        self.stats.in_bounds += 1;
        let cell = CellAccumulator {
            count: 1,
            speed_sum_milli: (probe.speed * SPEED_SCALE).round() as u64,
        };
        let key = self.key(frame, row, col, heading);
        self.slots.entry(key).or_default().add(cell);
        ProbeOutcome::Accepted
    }

    /// Tally a record that could not be parsed at all.
    pub fn reject(&mut self) {
        self.stats.records += 1;
        self.stats.rejected += 1;
    }

    /// Element-wise addition of another accumulator over the same grid.
    pub fn merge(mut self, mut other: DayAccumulator) -> Result<DayAccumulator> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows, self.cols],
                actual: vec![other.rows, other.cols],
            });
        }
        if other.slots.len() > self.slots.len() {
            std::mem::swap(&mut self.slots, &mut other.slots);
        }
        for (k, cell) in other.slots {
            self.slots.entry(k).or_default().add(cell);
        }
        self.stats.merge(&other.stats);
        Ok(self)
    }
}

/// Single-pass accumulation of a probe stream.
pub fn accumulate<'a, I>(probes: I, cfg: &CityConfig) -> DayAccumulator
where
    I: IntoIterator<Item = &'a ProbeRecord>,
{
    let mut acc = DayAccumulator::for_city(cfg);
    for p in probes {
        acc.add_probe(p, cfg, None);
    }
    acc
}

/// Accumulate contiguous shards in parallel and merge the partial results.
pub fn accumulate_sharded(probes: &[ProbeRecord], cfg: &CityConfig, shards: usize) -> DayAccumulator {
    let shards = shards.max(1);
    let chunk = probes.len().div_ceil(shards).max(1);
    probes
        .par_chunks(chunk)
        .map(|shard| accumulate(shard, cfg))
        .reduce(
            || DayAccumulator::for_city(cfg),
            |a, b| a.merge(b).expect("shards share the grid"),
        )
}

/// Encoded volume byte for a probe count.
pub fn encode_volume(count: u32, cfg: &CityConfig) -> u8 {
    if count == 0 || count < cfg.privacy_threshold {
        return 0;
    }
    let cap = cfg.volume_cap.max(1);
    let scaled = 255.0 * count.min(cap) as f64 / cap as f64;
    round_clamp(scaled, 1, 255)
}

/// Encoded mean-speed byte; data-bearing slots never encode to 0.
pub fn encode_speed(speed_sum: f64, count: u32, cfg: &CityConfig) -> u8 {
    if count == 0 || count < cfg.privacy_threshold {
        return 0;
    }
    let mean = speed_sum / count as f64;
    let scaled = 255.0 * mean.min(cfg.speed_cap) / cfg.speed_cap;
    round_clamp(scaled, 1, 255)
}

/// `encode_speed` on a fixed-point sum, exact when the cap is a whole number
/// of milli-km/h.
pub fn encode_speed_milli(speed_sum_milli: u64, count: u32, cfg: &CityConfig) -> u8 {
    let cap_milli = cfg.speed_cap * SPEED_SCALE;
    if cap_milli.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&cap_milli) {
        return encode_speed(speed_sum_milli as f64 / SPEED_SCALE, count, cfg);
    }
    if count == 0 || count < cfg.privacy_threshold {
        return 0;
    }
    // 255 * min(sum, cap * n) / (cap * n), rounded half up
    let denom = cap_milli as u128 * count as u128;
    let num = 255 * (speed_sum_milli as u128).min(denom);
    (((2 * num + denom) / (2 * denom)) as u8).max(1)
}

/// Encode an accumulator into a `(288, rows, cols, 8)` day tensor.
pub fn finalize(acc: &DayAccumulator, cfg: &CityConfig) -> Result<MovieTensor> {
    if acc.rows != cfg.rows || acc.cols != cfg.cols {
        return Err(Error::ShapeMismatch {
            expected: vec![cfg.rows, cfg.cols],
            actual: vec![acc.rows, acc.cols],
        });
    }
    let mut movie = MovieTensor::zeros(BINS_PER_DAY, cfg.rows, cfg.cols);
    for (frame, row, col, heading, cell) in acc.iter() {
        let vol = encode_volume(cell.count, cfg);
        let speed = encode_speed_milli(cell.speed_sum_milli, cell.count, cfg);
        movie.set(frame, row, col, heading.volume_channel(), vol);
        movie.set(frame, row, col, heading.speed_channel(), speed);
    }
    Ok(movie)
}

/// Parse a local timestamp such as `2020-04-07T08:15:00` or `2020-04-07 08:15:00.250`.
pub fn parse_local_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    parse_fixed_timestamp(s.as_bytes())
        .or_else(|| s.parse::<NaiveDateTime>().ok())
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f").ok())
}

/// Fast path for `YYYY-MM-DD[T ]HH:MM:SS` with an optional fraction of up to
/// nine digits. Anything else is left to chrono's parsers.
fn parse_fixed_timestamp(b: &[u8]) -> Option<NaiveDateTime> {
    if b.len() < 19 || b[4] != b'-' || b[7] != b'-' || !matches!(b[10], b'T' | b' ') || b[13] != b':' || b[16] != b':' {
        return None;
    }
    let num = |r: std::ops::Range<usize>| -> Option<u32> {
        b[r].iter().try_fold(0u32, |acc, &c| c.is_ascii_digit().then(|| acc * 10 + (c - b'0') as u32))
    };
    let nanos = match &b[19..] {
        [] => 0,
        [b'.', frac @ ..] if (1..=9).contains(&frac.len()) => num(20..b.len())? * 10u32.pow(9 - frac.len() as u32),
        _ => return None,
    };
    NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?.and_hms_nano_opt(
        num(11..13)?,
        num(14..16)?,
        num(17..19)?,
        nanos,
    )
}

pub const PROBE_CSV_HEADER: [&str; 5] = ["lat", "lon", "timestamp", "speed", "heading"];

/// Column positions of the probe fields within a CSV header.
#[derive(Debug, Clone, Copy)]
struct ProbeColumns([usize; 5]);

impl ProbeColumns {
    fn from_header(header: &csv::ByteRecord) -> Result<Self> {
        let mut idx = [usize::MAX; 5];
        for (i, name) in header.iter().enumerate() {
            let name = std::str::from_utf8(name).unwrap_or("").trim();
            if let Some(j) = PROBE_CSV_HEADER.iter().position(|h| *h == name) {
                idx[j] = i;
            }
        }
        if let Some(j) = idx.iter().position(|&i| i == usize::MAX) {
            return Err(Error::invalid(format!(
                "probe CSV header lacks column `{}`",
                PROBE_CSV_HEADER[j]
            )));
        }
        Ok(ProbeColumns(idx))
    }

    fn parse(&self, rec: &csv::ByteRecord) -> Option<ProbeRecord> {
        let field = |j: usize| rec.get(self.0[j]).and_then(|b| std::str::from_utf8(b).ok());
        let num = |j: usize| field(j)?.trim().parse::<f64>().ok();
        Some(ProbeRecord {
            lat: num(0)?,
            lon: num(1)?,
            timestamp: parse_local_timestamp(field(2)?)?,
            speed: num(3)?,
            heading: num(4)?,
        })
    }
}

/// Read every probe of a CSV stream; unparsable rows come back as `None`.
pub fn read_probes_csv<R: std::io::Read>(reader: R) -> Result<Vec<Option<ProbeRecord>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let cols = ProbeColumns::from_header(rdr.byte_headers()?)?;
    let mut out = Vec::new();
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(true) => out.push(cols.parse(&rec)),
            Ok(false) => break,
            Err(_) => out.push(None),
        }
    }
    Ok(out)
}

fn accumulate_csv_chunk(
    chunk: &[u8],
    cols: ProbeColumns,
    cfg: &CityConfig,
    date: Option<NaiveDate>,
) -> DayAccumulator {
    let mut acc = DayAccumulator::for_city(cfg);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(chunk);
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(true) => match cols.parse(&rec) {
                Some(p) => {
                    acc.add_probe(&p, cfg, date);
                }
                None => acc.reject(),
            },
            Ok(false) => break,
            Err(_) => acc.reject(),
        }
    }
    acc
}

/// Split a CSV body into roughly `parts` pieces at line boundaries.
fn split_lines(body: &[u8], parts: usize) -> Vec<&[u8]> {
    let target = body.len().div_ceil(parts.max(1)).max(1);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    while start < body.len() {
        let mut end = (start + target).min(body.len());
        if end < body.len() {
            end = match body[end..].iter().position(|&b| b == b'\n') {
                Some(p) => end + p + 1,
                None => body.len(),
            };
        }
        out.push(&body[start..end]);
        start = end;
    }
    out
}

/// Aggregates probe CSV files for one city-day on a fixed-size worker pool.
#[derive(Debug, Clone)]
pub struct Ingestor {
    pub cfg: CityConfig,
    pub date: Option<NaiveDate>,
    pub workers: usize,
}

impl Ingestor {
    pub fn new(cfg: CityConfig, date: Option<NaiveDate>, workers: usize) -> Self {
        Ingestor {
            cfg,
            date,
            workers: workers.max(1),
        }
    }

    /// Accumulate CSV text held in memory (header included).
    pub fn accumulate_bytes(&self, data: &[u8]) -> Result<DayAccumulator> {
        let header_end = data
            .iter()
            .position(|&b| b == b'\n')
            .map_or(data.len(), |p| p + 1);
        let mut hdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(&data[..header_end]);
        let cols = ProbeColumns::from_header(hdr.byte_headers()?)?;
        let body = &data[header_end..];
        // a few chunks per worker for load balance; one worker needs no merging
        let parts = if self.workers == 1 { 1 } else { self.workers * 4 };
        let chunks = split_lines(body, parts);
        let run = || {
            chunks
                .par_iter()
                .map(|c| accumulate_csv_chunk(c, cols, &self.cfg, self.date))
                .reduce(
                    || DayAccumulator::for_city(&self.cfg),
                    |a, b| a.merge(b).expect("shards share the grid"),
                )
        };
        Ok(self.pool()?.install(run))
    }

    pub fn accumulate_files(&self, paths: &[PathBuf]) -> Result<DayAccumulator> {
        let mut acc = DayAccumulator::for_city(&self.cfg);
        for path in paths {
            let data = read_file(path)?;
            acc = acc.merge(self.accumulate_bytes(&data)?)?;
        }
        Ok(acc)
    }

    pub fn run(&self, paths: &[PathBuf]) -> Result<(MovieTensor, IngestStats)> {
        let acc = self.accumulate_files(paths)?;
        let movie = finalize(&acc, &self.cfg)?;
        Ok((movie, *acc.stats()))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write probes as CSV with the canonical header.
pub fn write_probes_csv<W: std::io::Write>(writer: W, probes: &[ProbeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PROBE_CSV_HEADER)?;
    for p in probes {
        w.write_record([
            p.lat.to_string(),
            p.lon.to_string(),
            p.timestamp.format("%Y-%m-%dT%H:%M:%S%.3f").to_string(),
            p.speed.to_string(),
            p.heading.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
