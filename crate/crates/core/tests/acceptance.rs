//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use t4c_core::baselines::HORIZONS;
use t4c_core::ingest::{accumulate, accumulate_sharded, write_probes_csv, DayAccumulator};
use t4c_core::io::{read_tensor, write_tensor, ContainerFormat, Tensor};
use t4c_core::metrics::{masked_mse, mse, mse_vs_std, pixel_mse_std, road_mask, ChannelKind, Mask, MaskMode};
use t4c_core::outliers::{detect_outliers, outlier_mask_score, OutlierCriteria, OutlierEvent};
use t4c_core::slots::{sample_slot_keys, sample_slots, MAX_START_BIN, STARTS_PER_DAY, TRUTH_OFFSETS};
use t4c_core::static_graph::{build_static, Direction, HighResRaster, StaticTensor};
use t4c_core::synth;
use t4c_core::{finalize, CityConfig, DirectionalPixel, HeadingQuadrant, Ingestor, MovieTensor, ProbeRecord, BINS_PER_DAY, CHANNELS};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 10).unwrap()
}

/// Probes placed inside a known cell, quadrant and bin, so the expected
/// tensor follows from counting alone. About 3% fall outside the box.
struct PlacedProbe {
    probe: ProbeRecord,
    slot: Option<(usize, usize, usize, usize)>,
    speed_tenths: u64,
}

fn placed_probes(cfg: &CityConfig, n: usize, seed: u64) -> Vec<PlacedProbe> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let midnight = synth::midnight(date());
    (0..n)
        .map(|_| {
            let bin = r.gen_range(0..BINS_PER_DAY);
            let q = r.gen_range(0..4usize);
            // exact sector starts appear often
            let heading = 90.0 * q as f64 + if r.gen_bool(0.1) { 0.0 } else { r.gen_range(0.0..90.0) };
            let speed_tenths = r.gen_range(0..1600u64);
            let (fr, fc) = (r.gen_range(0.05..0.95), r.gen_range(0.05..0.95));
            let outside = r.gen_bool(0.03);
            let (row, col) = (r.gen_range(0..cfg.rows), r.gen_range(0..cfg.cols));
            // row 0 is the northern edge; an outside probe sits one row past it
            let geo_row = if outside { -1.0 } else { row as f64 };
            let lat = cfg.lat_min + (cfg.rows as f64 - geo_row - 1.0 + fr) * cfg.cell_size;
            let lon = cfg.lon_min + (col as f64 + fc) * cfg.cell_size;
            PlacedProbe {
                probe: ProbeRecord {
                    lat,
                    lon,
                    timestamp: midnight + Duration::seconds(bin as i64 * 300 + r.gen_range(0..300)),
                    speed: speed_tenths as f64 / 10.0,
                    heading,
                },
                slot: (!outside).then_some((bin, row, col, q)),
                speed_tenths,
            }
        })
        .collect()
}

/// Reference tensor from per-slot integer tallies and exact rational rounding.
fn brute_force_day(cfg: &CityConfig, probes: &[PlacedProbe]) -> MovieTensor {
    let mut tally: BTreeMap<(usize, usize, usize, usize), (u64, u64)> = BTreeMap::new();
    for p in probes {
        if let Some(k) = p.slot {
            let e = tally.entry(k).or_default();
            e.0 += 1;
            e.1 += p.speed_tenths;
        }
    }
    let cap_tenths = (cfg.speed_cap * 10.0) as u64;
    let mut day = MovieTensor::zeros(BINS_PER_DAY, cfg.rows, cfg.cols);
    for ((bin, row, col, q), (n, sum)) in tally {
        let vol = (2 * 255 * n.min(255) + 255) / (2 * 255);
        let denom = cap_tenths * n;
        let speed = ((2 * 255 * sum.min(denom) + denom) / (2 * denom)).max(1);
        day.set(bin, row, col, 2 * q, vol as u8);
        day.set(bin, row, col, 2 * q + 1, speed as u8);
    }
    day
}

fn aggregation_oracle() -> Result<String, String> {
    let cfg = CityConfig::with_grid("grid20", 52.0, 13.0, 20, 20);
    let probes = placed_probes(&cfg, 10_000, 1);
    let expected = brute_force_day(&cfg, &probes);
    let records: Vec<ProbeRecord> = probes.iter().map(|p| p.probe).collect();
    let mut csv = Vec::new();
    write_probes_csv(&mut csv, &records).map_err(|e| e.to_string())?;

    let t0 = Instant::now();
    let acc = Ingestor::new(cfg.clone(), Some(date()), 4)
        .accumulate_bytes(&csv)
        .map_err(|e| e.to_string())?;
    let from_csv = finalize(&acc, &cfg).map_err(|e| e.to_string())?;
    let from_records = finalize(&accumulate_sharded(&records, &cfg, 7), &cfg).map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();

    let outside = probes.iter().filter(|p| p.slot.is_none()).count() as u64;
    ensure(acc.stats().out_of_bounds == outside, || {
        format!("out-of-bounds tally {} != {outside}", acc.stats().out_of_bounds)
    })?;
    let diff = from_csv.data().iter().zip(expected.data()).filter(|(a, b)| a != b).count();
    ensure(diff == 0, || format!("{diff} bytes differ from the reference (csv path)"))?;
    ensure(from_records == expected, || "record path differs from the reference".into())?;
    ensure(elapsed.as_secs_f64() < 5.0, || format!("took {elapsed:?}"))?;
    Ok(format!("10000 probes, byte-exact, {:.3}s", elapsed.as_secs_f64()))
}

fn shard_associativity() -> Result<String, String> {
    let cfg = CityConfig::with_grid("grid16", 48.0, 11.0, 16, 16);
    let probes = synth::random_probes(&cfg, date(), 5_000, 2);
    let reference = finalize(&accumulate(&probes, &cfg), &cfg).map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let k = r.gen_range(1..=8);
        let mut shards: Vec<Vec<&ProbeRecord>> = vec![Vec::new(); k];
        for p in &probes {
            shards[r.gen_range(0..k)].push(p);
        }
        let mut parts: Vec<DayAccumulator> = shards.into_iter().map(|s| accumulate(s, &cfg)).collect();
        parts.shuffle(&mut r);
        let mut merged = DayAccumulator::for_city(&cfg);
        for p in parts {
            merged = merged.merge(p).map_err(|e| e.to_string())?;
        }
        let out = finalize(&merged, &cfg).map_err(|e| e.to_string())?;
        ensure(out == reference, || format!("partition {trial} into {k} shards differs"))?;
    }
    Ok("50 random partitions into 1-8 shards".into())
}

fn random_pair(r: &mut ChaCha8Rng) -> (Vec<MovieTensor>, Vec<MovieTensor>) {
    let (n, rows, cols) = (r.gen_range(1..4), r.gen_range(1..8), r.gen_range(1..8));
    let p = (0..n).map(|_| synth::random_movie(r, HORIZONS, rows, cols)).collect();
    let t = (0..n).map(|_| synth::random_movie(r, HORIZONS, rows, cols)).collect();
    (p, t)
}

fn mse_identity() -> Result<String, String> {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let (p, t) = random_pair(&mut r);
        let s = mse(&p, &t).map_err(|e| e.to_string())?;
        let mean = (s.mse_volume + s.mse_speed) / 2.0;
        ensure((s.mse_all - mean).abs() <= 1e-9 * s.mse_all.abs().max(1e-300), || {
            format!("pair {i}: {} vs {mean}", s.mse_all)
        })?;
    }
    // published speed, volume and overall MSE of a winning submission
    let (speed, vol, all): (f64, f64, f64) = (148.427, 10.440, 79.434);
    ensure(((speed + vol) / 2.0 - all).abs() < 1e-3, || "published triple breaks the identity".into())?;
    Ok("100 random pairs, published triple consistent".into())
}

fn mask_neutrality() -> Result<String, String> {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for i in 0..50 {
        let (p, t) = random_pair(&mut r);
        let plain = mse(&p, &t).map_err(|e| e.to_string())?;
        for mode in [MaskMode::Both, MaskMode::PredOnly] {
            let ones = Mask::ones(t[0].rows(), t[0].cols(), mode);
            let masked = masked_mse(&p, &t, &ones).map_err(|e| e.to_string())?;
            ensure(masked == plain, || format!("instance {i} differs under {mode:?}"))?;
        }
    }
    Ok("50 instances, both modes, exact".into())
}

fn masked_semantics() -> Result<String, String> {
    let city = synth::noisy_city(12, 10, 5, 6, 6);
    let mut st = StaticTensor::zeros(city.rows, city.cols);
    for (i, &on) in city.road.iter().enumerate() {
        if on {
            st.set(0, i / city.cols, i % city.cols, 180);
        }
    }
    let mask = road_mask(&st);
    let plain = mse(&city.pred, &city.truth).map_err(|e| e.to_string())?.mse_all;
    let both = masked_mse(&city.pred, &city.truth, &mask).map_err(|e| e.to_string())?.mse_all;
    let pred_only = masked_mse(&city.pred, &city.truth, &mask.clone().with_mode(MaskMode::PredOnly))
        .map_err(|e| e.to_string())?
        .mse_all;

    // zeroing an off-road prediction swaps (p - t)^2 for t^2
    let cells = city.rows * city.cols;
    let (mut change, mut total) = (0i64, 0usize);
    for (p, t) in city.pred.iter().zip(&city.truth) {
        for (i, (&a, &b)) in p.data().iter().zip(t.data()).enumerate() {
            total += 1;
            if !city.road[(i / CHANNELS) % cells] {
                let (a, b) = (a as i64, b as i64);
                change += (a - b) * (a - b) - b * b;
            }
        }
    }
    let expected = change as f64 / total as f64;
    let delta_both = plain - both;
    let delta_pred = plain - pred_only;
    ensure(delta_both > 0.0, || format!("both-masked delta {delta_both} not positive"))?;
    ensure((delta_pred - expected).abs() <= 1e-9 * expected.abs().max(1.0), || {
        format!("pred-only delta {delta_pred} vs hand value {expected}")
    })?;
    Ok(format!("both delta {delta_both:.6}, pred-only delta {delta_pred:.6} (hand {expected:.6})"))
}

/// 30x30 road raster over a 3x3 grid, pixels given as (row, col).
fn fixture_raster() -> HighResRaster {
    let mut r = HighResRaster::blank(30, 30);
    let mut road = |px: &[(usize, usize)]| px.iter().for_each(|&(y, x)| r.set(y, x, 0));
    // straight east-west road across the top two blocks
    road(&(0..=14).map(|x| (2, x)).collect::<Vec<_>>());
    // north-south road down the right column
    road(&(0..=14).map(|y| (y, 27)).collect::<Vec<_>>());
    // (1,0) to (2,1) around the corner in 3 steps
    road(&[(19, 9), (19, 10), (19, 11), (20, 12)]);
    // (1,2) to (2,1) around the corner, 8 steps
    road(&[(19, 20), (20, 21), (21, 21), (22, 21), (23, 21), (24, 21), (25, 21), (26, 20), (26, 19)]);
    // (0,1) to (1,0) around the corner, exactly 7 steps
    road(&[(9, 10), (8, 9), (8, 8), (8, 7), (8, 6), (8, 5), (9, 4), (10, 4)]);
    r
}

fn static_graph_table() -> Result<String, String> {
    let cfg = CityConfig::with_grid("fixture", 0.0, 0.0, 3, 3);
    let st = build_static(&fixture_raster(), &cfg).map_err(|e| e.to_string())?;
    use Direction::*;
    let links: &[((usize, usize), Direction)] = &[
        ((0, 0), E),
        ((1, 0), E),
        ((2, 1), E),
        ((0, 2), S),
        ((1, 1), S),
        ((1, 2), S),
        ((0, 0), S),
        // detours around a corner
        ((1, 0), SE),
        ((0, 1), SW),
    ];
    let mut expected = HashSet::new();
    for &((r, c), d) in links {
        let (dr, dc) = d.offset();
        let (nr, nc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
        expected.insert((r, c, d));
        expected.insert((nr, nc, d.opposite()));
    }
    let mut checked = 0;
    for r in 0..3 {
        for c in 0..3 {
            for d in [N, NE, E, SE, S, SW, W, NW] {
                let want = expected.contains(&(r, c, d));
                let got = st.get(d.channel(), r, c);
                ensure(got == want as u8, || format!("cell ({r},{c}) {d:?}: got {got}, want {}", want as u8))?;
                checked += 1;
            }
        }
    }
    ensure(!st.connected(1, 2, SW) && !st.connected(2, 1, NE), || "8-step detour must be blocked".into())?;
    // road pixels per block; density is round-half-up of 255 * k / 100
    let counts = [[16, 6, 10], [2, 2, 6], [0, 2, 7]];
    for (r, line) in counts.iter().enumerate() {
        for (c, &k) in line.iter().enumerate() {
            let want = ((255 * k + 50) / 100) as u8;
            ensure(st.get(0, r, c) == want, || format!("density ({r},{c}): got {}, want {want}", st.get(0, r, c)))?;
        }
    }
    Ok(format!("{checked} connectivity bits and 9 densities match"))
}

fn test_slot_contract() -> Result<String, String> {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let days: Vec<(NaiveDate, MovieTensor)> = (0..3)
        .map(|i| {
            let mut m = MovieTensor::zeros(BINS_PER_DAY, 1, 2);
            for f in 0..BINS_PER_DAY {
                // frame index in channel 0, day index in channel 1
                m.set(f, 0, 0, 0, (f % 256) as u8);
                m.set(f, 0, 0, 1, (f / 256) as u8);
                m.set(f, 0, 1, 0, i as u8);
            }
            (date() + Duration::days(i), m)
        })
        .collect();
    let frame_at = |m: &MovieTensor, f: usize| m.get(f, 0, 0, 0) as usize + 256 * m.get(f, 0, 0, 1) as usize;
    for _ in 0..20 {
        let seed = r.gen();
        let n = r.gen_range(1..=100);
        let slots = sample_slots("X", &days, n, seed).map_err(|e| e.to_string())?;
        ensure(slots.len() == n, || format!("asked for {n}, got {}", slots.len()))?;
        for s in &slots {
            ensure(s.start_bin <= MAX_START_BIN, || format!("start {} out of range", s.start_bin))?;
            for f in 0..12 {
                ensure(frame_at(&s.input, f) == s.start_bin + f, || format!("input frame {f} misplaced"))?;
            }
            for (h, &o) in TRUTH_OFFSETS.iter().enumerate() {
                ensure(frame_at(&s.truth, h) == s.start_bin + o, || format!("truth horizon {h} misplaced"))?;
            }
            let day_idx = s.input.get(0, 0, 1, 0) as i64;
            ensure(s.date == date() + Duration::days(day_idx), || "slot date disagrees with its day".into())?;
        }
    }
    let all = 2 * STARTS_PER_DAY;
    let keys = sample_slot_keys(2, all, 11).map_err(|e| e.to_string())?;
    let distinct: HashSet<_> = keys.iter().copied().collect();
    ensure(keys.len() == all && distinct.len() == all, || "exhaustive draw repeated a pair".into())?;
    ensure(distinct.iter().all(|&(d, s)| d < 2 && s <= MAX_START_BIN), || "exhaustive draw left the domain".into())?;
    ensure(sample_slot_keys(2, all + 1, 11).is_err(), || "over-draw must fail".into())?;
    Ok(format!("offsets hold on 20 samples, exhaustive draw covers {all} pairs once"))
}

fn outlier_detection() -> Result<String, String> {
    let p = DirectionalPixel::new(2, 3, HeadingQuadrant::SE);
    let crit = OutlierCriteria::default();
    let mut day = synth::busy_day(5, 6, 2);
    synth::inject_jam(&mut day, p, 120, 4);
    let events = detect_outliers(&day, &crit).map_err(|e| e.to_string())?;
    let want = OutlierEvent {
        row: 2,
        col: 3,
        heading: HeadingQuadrant::SE,
        start_bin: 120,
        duration: 4,
    };
    ensure(events == vec![want], || format!("10AM jam gave {events:?}"))?;

    let mut early = synth::busy_day(5, 6, 2);
    synth::inject_jam(&mut early, p, 72, 4);
    let none = detect_outliers(&early, &crit).map_err(|e| e.to_string())?;
    ensure(none.is_empty(), || format!("6AM jam gave {none:?}"))?;

    let mut r = ChaCha8Rng::seed_from_u64(8);
    let n = 200;
    let pred: Vec<_> = (0..n).map(|_| synth::random_movie(&mut r, HORIZONS, 4, 4)).collect();
    let truth: Vec<_> = (0..n).map(|_| synth::random_movie(&mut r, HORIZONS, 4, 4)).collect();
    let events: Vec<_> = (0..n)
        .map(|_| OutlierEvent {
            row: r.gen_range(0..4),
            col: r.gen_range(0..4),
            heading: HeadingQuadrant::ALL[r.gen_range(0..4)],
            start_bin: 120,
            duration: 2,
        })
        .collect();
    let score = outlier_mask_score(&pred, &truth, &events).map_err(|e| e.to_string())?;
    ensure(score.n_values == n * 6 * 2, || format!("denominator {} != {}", score.n_values, n * 6 * 2))?;
    let mut sse = 0u64;
    for ((p, t), e) in pred.iter().zip(&truth).zip(&events) {
        for f in 0..HORIZONS {
            for ch in [e.heading.volume_channel(), e.heading.speed_channel()] {
                let d = p.get(f, e.row, e.col, ch) as i64 - t.get(f, e.row, e.col, ch) as i64;
                sse += (d * d) as u64;
            }
        }
    }
    let want_mse = sse as f64 / (n * 12) as f64;
    ensure((score.mse - want_mse).abs() <= 1e-9 * want_mse, || format!("score {} vs {want_mse}", score.mse))?;
    Ok("one exact event at 10AM, none at 6AM, denominator 2400".into())
}

fn std_binning_conservation() -> Result<String, String> {
    let (rows, cols) = (7, 9);
    let batch = synth::two_population_batch(rows, cols, 4, 9);
    for kind in [ChannelKind::Volume, ChannelKind::Speed] {
        let px = pixel_mse_std(&batch.pred, &batch.inputs, &batch.truth, kind).map_err(|e| e.to_string())?;
        ensure(px.len() == rows * cols * 4, || format!("{} directional pixels", px.len()))?;
        let total: f64 = px.iter().map(|p| p.mse).sum();
        let report = mse_vs_std(&batch.pred, &batch.inputs, &batch.truth, kind, 5.0).map_err(|e| e.to_string())?;
        let binned: f64 = report.summed_mse.iter().sum();
        ensure((binned - total).abs() <= 1e-6 * total, || format!("binned {binned} vs total {total}"))?;
        ensure(report.total_count() == (rows * cols * 4) as u64, || "bin counts do not cover every pixel".into())?;
    }
    let default_grid = CityConfig::new("default", 0.0, 0.0).directional_pixels();
    ensure(default_grid == 863_280, || format!("default grid has {default_grid} directional pixels"))?;
    Ok("sums conserved for volume and speed, 863280 directional pixels".into())
}

fn throughput() -> Result<String, String> {
    let cfg = CityConfig::new("bench", 52.0, 13.0);
    let n = 1_000_000;
    let probes = synth::random_probes(&cfg, date(), n, 10);
    let mut csv = Vec::new();
    write_probes_csv(&mut csv, &probes).map_err(|e| e.to_string())?;
    let rate = |workers: usize| -> Result<f64, String> {
        let ing = Ingestor::new(cfg.clone(), Some(date()), workers);
        let t0 = Instant::now();
        let acc = ing.accumulate_bytes(&csv).map_err(|e| e.to_string())?;
        let secs = t0.elapsed().as_secs_f64();
        ensure(acc.stats().records == n as u64, || "record count mismatch".into())?;
        Ok(n as f64 / secs)
    };
    let one = rate(1)?;
    let four = rate(4)?;
    let cores = std::thread::available_parallelism().map_or(1, |c| c.get());
    Ok(format!(
        "reported only: {:.2}M probes/s on 1 worker, {:.2}M on 4 ({:.2}x, {cores} cores available)",
        one / 1e6,
        four / 1e6,
        four / one
    ))
}

fn container_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let shapes: Vec<Vec<usize>> = vec![
        vec![BINS_PER_DAY, 3, 4, 8],
        vec![12, 5, 2, 8],
        vec![6, 5, 2, 8],
        vec![3, 12, 4, 3, 8],
        vec![4, 6, 4, 3, 8],
        vec![9, 6, 7],
        vec![30, 30],
        vec![5, 2],
        vec![1, 1, 1, 8],
        vec![2, 6, 1, 1, 8],
    ];
    let mut formats = Vec::new();
    if cfg!(feature = "hdf5") {
        formats.push(("h5", ContainerFormat::Hdf5 { compress: true }));
    }
    formats.push(("t4c", ContainerFormat::Flat));
    let mut done = 0;
    for i in 0..20 {
        let shape = shapes[i % shapes.len()].clone();
        let mut data = vec![0u8; shape.iter().product()];
        r.fill(&mut data[..]);
        let t = Tensor::new(shape.clone(), data).map_err(|e| e.to_string())?;
        for &(ext, fmt) in &formats {
            let path = dir.path().join(format!("t{i}.{ext}"));
            write_tensor(&path, &t, fmt).map_err(|e| e.to_string())?;
            let back = read_tensor(&path).map_err(|e| e.to_string())?;
            ensure(back == t, || format!("tensor {i} {shape:?} changed in {ext}"))?;
            done += 1;
        }
    }
    ensure(formats.len() == 2, || "built without hdf5 support".into())?;
    Ok(format!("{done} round trips over {} shapes", shapes.len()))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("aggregation matches brute-force oracle", aggregation_oracle),
        ("shard merge is associative", shard_associativity),
        ("mse_all is the mean of volume and speed mse", mse_identity),
        ("all-ones mask is neutral", mask_neutrality),
        ("masked mse semantics", masked_semantics),
        ("static graph connectivity table", static_graph_table),
        ("test slot contract", test_slot_contract),
        ("outlier detection and scoring", outlier_detection),
        ("std binning conserves mse", std_binning_conservation),
        ("ingest throughput", throughput),
        ("container round trip", container_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
