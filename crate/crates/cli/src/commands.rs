use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::Serialize;

use t4c_core::analysis::{pixel_timeseries, VolumeCurveBuilder};
use t4c_core::io::{self, LockFile, Manifest};
use t4c_core::metrics::{self, road_mask};
use t4c_core::outliers::{self, OutlierCriteria};
use t4c_core::slots::{self, TestPaths, TestSlot};
use t4c_core::static_graph::build_static;
use t4c_core::{synth, CityConfig, DirectionalPixel, HighResRaster, Ingestor, MovieTensor, StaticTensor, Tensor};

use crate::{AnalyzeCommand, Command, OutliersCommand, SlotsCommand, SynthCommand};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(&a.probes, &a.city_config, a.date, &a.out, a.workers, a.stats.as_deref()),
        Command::Static(a) => static_tensor(&a.raster, &a.city_config, &a.out),
        Command::Slots(SlotsCommand::Sample {
            days,
            n,
            seed,
            out_prefix,
            ext,
        }) => sample_slots(&days, n, seed, &out_prefix, &ext),
        Command::Score(a) => score(&a.pred, &a.truth, a.mask.as_deref(), a.mask_mode, &a.report),
        Command::Analyze(c) => analyze(c),
        Command::Outliers(c) => outliers(c),
        Command::Baseline(a) => {
            let inputs = io::read_tensor(&a.test)?;
            let stacked = inputs.shape().len() == 5;
            let preds = inputs
                .unstack()?
                .iter()
                .map(|m| a.method.predict(m))
                .collect::<t4c_core::Result<Vec<_>>>()?;
            let out = if stacked {
                Tensor::stack(&preds)?
            } else {
                Tensor::from_movie(&preds[0])
            };
            io::save(&a.out, &out)?;
            info!("wrote {} predictions to {}", preds.len(), a.out.display());
            Ok(())
        }
        Command::Synth(SynthCommand::Probes {
            city_config,
            date,
            n,
            seed,
            out,
        }) => {
            let cfg = CityConfig::load(&city_config)?;
            let probes = synth::random_probes(&cfg, date, n, seed);
            let f = create(&out)?;
            t4c_core::ingest::write_probes_csv(f, &probes)?;
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn ingest(
    pattern: &str,
    city_config: &Path,
    date: chrono::NaiveDate,
    out: &Path,
    workers: usize,
    stats: Option<&Path>,
) -> Result<()> {
    let cfg = CityConfig::load(city_config)?;
    let mut files: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad glob `{pattern}`"))?
        .collect::<std::result::Result<_, _>>()?;
    files.sort();
    ensure!(!files.is_empty(), "no probe files match `{pattern}`");
    let _lock = LockFile::acquire(out)?;
    let (movie, tallies) = Ingestor::new(cfg, Some(date), workers).run(&files)?;
    io::write_movie(out, &movie)?;
    info!(
        "{} records from {} files: {} in bounds, {} out of bounds, {} rejected",
        tallies.records,
        files.len(),
        tallies.in_bounds,
        tallies.out_of_bounds,
        tallies.rejected
    );
    if let Some(path) = stats {
        write_json(path, &tallies)?;
    }
    Ok(())
}

fn static_tensor(raster: &Path, city_config: &Path, out: &Path) -> Result<()> {
    let cfg = CityConfig::load(city_config)?;
    let raster = HighResRaster::load(raster)?;
    let st = build_static(&raster, &cfg)?;
    io::save(out, &st.to_tensor())?;
    Ok(())
}

/// Draws keys first, then loads each needed day once.
fn sample_slots(manifest: &Path, n: usize, seed: u64, prefix: &Path, ext: &str) -> Result<()> {
    let m = Manifest::load(manifest)?;
    let days: Vec<_> = m.days.iter().collect();
    let keys = slots::sample_slot_keys(days.len(), n, seed)?;
    let mut by_day: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(d, _)) in keys.iter().enumerate() {
        by_day.entry(d).or_default().push(i);
    }
    let mut out: Vec<Option<TestSlot>> = vec![None; keys.len()];
    for (d, idx) in by_day {
        let (date, path) = days[d];
        let day = io::read_movie(path).with_context(|| format!("reading day {date}"))?;
        for i in idx {
            out[i] = Some(slots::materialize(&m.city, *date, &day, keys[i].1)?);
        }
    }
    let slots: Vec<TestSlot> = out.into_iter().map(|s| s.expect("every key materialized")).collect();
    let paths = TestPaths::new(prefix, ext);
    slots::write_test_files(&paths, &slots, Some(seed))?;
    info!("wrote {} slots to {}", slots.len(), paths.input.display());
    Ok(())
}

/// Tensor files under `path` (or `path` itself), sorted by name.
fn tensor_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        let hidden = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        let other = matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "csv" | "lock"));
        if p.is_file() && !hidden && !other {
            files.push(p);
        }
    }
    files.sort();
    ensure!(!files.is_empty(), "no tensor files in {}", path.display());
    Ok(files)
}

fn load_movies(files: &[PathBuf]) -> Result<Vec<MovieTensor>> {
    let mut all = Vec::new();
    for f in files {
        all.extend(
            io::read_tensor(f)
                .and_then(Tensor::unstack)
                .with_context(|| format!("reading {}", f.display()))?,
        );
    }
    Ok(all)
}

/// Matching test sets from two locations; directories pair files by stem.
fn load_pairs(a: &Path, b: &Path) -> Result<(Vec<MovieTensor>, Vec<MovieTensor>)> {
    let (fa, fb) = (tensor_files(a)?, tensor_files(b)?);
    if a.is_dir() && b.is_dir() {
        let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_os_string());
        let sa: Vec<_> = fa.iter().map(stem).collect();
        let sb: Vec<_> = fb.iter().map(stem).collect();
        if sa != sb {
            bail!("{} and {} do not hold the same file names", a.display(), b.display());
        }
    }
    Ok((load_movies(&fa)?, load_movies(&fb)?))
}

fn score(pred: &Path, truth: &Path, mask: Option<&Path>, mode: t4c_core::MaskMode, report: &Path) -> Result<()> {
    let (p, t) = load_pairs(pred, truth)?;
    let r = match mask {
        None => metrics::mse(&p, &t)?,
        Some(path) => {
            let st = StaticTensor::from_tensor(io::read_tensor(path)?)?;
            metrics::masked_mse(&p, &t, &road_mask(&st).with_mode(mode))?
        }
    };
    info!("mse {:.4} (volume {:.4}, speed {:.4}) over {} tests", r.mse_all, r.mse_volume, r.mse_speed, r.n_tests);
    write_json(report, &r)
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::MseStd {
            pred,
            inputs,
            truth,
            channel,
            bin_width,
            out,
        } => {
            let (p, t) = load_pairs(&pred, &truth)?;
            let inp = load_movies(&tensor_files(&inputs)?)?;
            let report = metrics::mse_vs_std(&p, &inp, &t, channel, bin_width)?;
            report.write_csv(create(&out)?)?;
        }
        AnalyzeCommand::PixelStats { truth, out } => {
            let mut files = Vec::new();
            for t in &truth {
                files.extend(tensor_files(t)?);
            }
            let stats = metrics::pixel_stats(&load_movies(&files)?)?;
            metrics::write_pixel_stats_csv(create(&out)?, &stats)?;
        }
        AnalyzeCommand::DailyVolume {
            days,
            label,
            out,
            append,
        } => {
            let m = Manifest::load(&days)?;
            let mut b = VolumeCurveBuilder::default();
            for (date, path) in &m.days {
                let day = io::read_movie(path).with_context(|| format!("reading day {date}"))?;
                b.add_day(&day)?;
            }
            let curve = b.finish(label)?;
            let existing = append && out.metadata().is_ok_and(|md| md.len() > 0);
            let f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(existing)
                .truncate(!existing)
                .open(&out)
                .with_context(|| format!("opening {}", out.display()))?;
            curve.write_csv(BufWriter::new(f), !existing)?;
        }
        AnalyzeCommand::Pixel {
            day,
            row,
            col,
            heading,
            out,
        } => {
            let days = day
                .iter()
                .map(|p| io::read_movie(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let series = pixel_timeseries(&days, DirectionalPixel::new(row, col, heading))?;
            series.write_csv(create(&out)?)?;
        }
    }
    Ok(())
}

fn outliers(cmd: OutliersCommand) -> Result<()> {
    match cmd {
        OutliersCommand::Detect { day, criteria, out } => {
            let crit = match criteria {
                Some(p) => OutlierCriteria::load(p)?,
                None => OutlierCriteria::default(),
            };
            let events = outliers::detect_outliers(&io::read_movie(&day)?, &crit)?;
            info!("{} events", events.len());
            outliers::write_events_csv(create(&out)?, &events)?;
        }
        OutliersCommand::Score {
            pred,
            truth,
            events,
            report,
        } => {
            let (p, t) = load_pairs(&pred, &truth)?;
            let ev = outliers::read_events_csv(File::open(&events).with_context(|| format!("opening {}", events.display()))?)?;
            let s = outliers::outlier_mask_score(&p, &t, &ev)?;
            write_json(&report, &s)?;
        }
        OutliersCommand::MakeTests {
            day,
            date,
            city,
            events,
            out_prefix,
            ext,
        } => {
            let ev = outliers::read_events_csv(File::open(&events).with_context(|| format!("opening {}", events.display()))?)?;
            let (tests, skipped) = outliers::make_outlier_tests(&city, date, &io::read_movie(&day)?, &ev)?;
            if skipped > 0 {
                log::warn!("skipped {skipped} events without a full input window or horizon");
            }
            ensure!(!tests.is_empty(), "no event yields a complete test");
            slots::write_test_files(&TestPaths::new(&out_prefix, &ext), &tests, None)?;
            // the events behind the tests, in test order, for `outliers score`
            let kept: Vec<_> = ev.into_iter().filter(|e| outliers::outlier_test_start(e).is_some()).collect();
            let mut name = out_prefix.into_os_string();
            name.push("_events.csv");
            outliers::write_events_csv(create(Path::new(&name))?, &kept)?;
        }
    }
    Ok(())
}
