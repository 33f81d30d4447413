use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use t4c_core::io::{self, Manifest};
use t4c_core::static_graph::HighResRaster;
use t4c_core::{synth, CityConfig, DirectionalPixel, HeadingQuadrant, MovieTensor};

fn t4c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t4c"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = t4c(args);
    assert!(
        out.status.success(),
        "t4c {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn city(dir: &Path) -> PathBuf {
    let path = dir.join("city.json");
    let cfg = CityConfig::with_grid("testville", 52.0, 13.0, 8, 6);
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn ingest_writes_day_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = city(dir.path());
    for (i, seed) in [1, 2].iter().enumerate() {
        let csv = dir.path().join(format!("probes_{i}.csv"));
        ok(&["synth", "probes", "--city-config", s(&cfg), "--date", "2020-03-10", "--n", "2000", "--seed", &seed.to_string(), "--out", s(&csv)]);
    }
    let out = dir.path().join("day.h5");
    let stats = dir.path().join("stats.json");
    let pattern = dir.path().join("probes_*.csv");
    ok(&["ingest", "--probes", s(&pattern), "--city-config", s(&cfg), "--date", "2020-03-10", "--out", s(&out), "--workers", "2", "--stats", s(&stats)]);

    let day = io::read_movie(&out).unwrap();
    assert_eq!(day.shape(), [288, 8, 6, 8]);
    let st = json(&stats);
    assert_eq!(st["records"], 4000);
    let parts = ["in_bounds", "out_of_bounds", "rejected"].map(|k| st[k].as_u64().unwrap());
    assert_eq!(parts.iter().sum::<u64>(), 4000);
    assert!(parts[0] > 3000 && parts[1] > 0);
    assert!(!dir.path().join("day.h5.lock").exists());

    // a held lock blocks a second writer
    std::fs::write(dir.path().join("day.h5.lock"), "1").unwrap();
    let busy = t4c(&["ingest", "--probes", s(&pattern), "--city-config", s(&cfg), "--date", "2020-03-10", "--out", s(&out)]);
    assert!(!busy.status.success());
    assert!(String::from_utf8_lossy(&busy.stderr).contains("locked"));

    let none = t4c(&["ingest", "--probes", s(&dir.path().join("nothing*.csv")), "--city-config", s(&cfg), "--date", "2020-03-10", "--out", s(&dir.path().join("x.h5"))]);
    assert!(!none.status.success());
}

#[test]
fn static_from_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = city(dir.path());
    let mut r = HighResRaster::blank(80, 60);
    for x in 0..60 {
        r.set(35, x, 0);
    }
    let pgm = dir.path().join("roads.pgm");
    r.save_pgm(&pgm).unwrap();
    let out = dir.path().join("static.t4c");
    ok(&["static", "--raster", s(&pgm), "--city-config", s(&cfg), "--out", s(&out)]);
    let t = io::read_tensor(&out).unwrap();
    assert_eq!(t.shape(), [9, 8, 6]);
    let plane = 8 * 6;
    // the road crosses grid row 3 west to east: 10 pixels of 100 per cell
    for c in 0..6 {
        assert_eq!(t.data()[3 * 6 + c], 26);
        assert_eq!(t.data()[3 * plane + 3 * 6 + c], (c < 5) as u8, "east bit at column {c}");
    }
    assert_eq!(t.data()[..plane].iter().filter(|&&v| v > 0).count(), 6);
}

fn write_days(dir: &Path, n: usize) -> PathBuf {
    let mut rng = synth::rng(5);
    let mut days = std::collections::BTreeMap::new();
    for i in 0..n {
        let date = chrono::NaiveDate::from_ymd_opt(2019, 6, 3 + i as u32).unwrap();
        let day = synth::random_movie(&mut rng, 288, 4, 5);
        let name = format!("day{i}.t4c");
        io::write_movie(dir.join(&name), &day).unwrap();
        days.insert(date, PathBuf::from(name));
    }
    let path = dir.join("manifest.json");
    Manifest { city: "testville".into(), days }.save(&path).unwrap();
    path
}

#[test]
fn slots_baseline_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_days(dir.path(), 3);
    let prefix = dir.path().join("test");
    ok(&["slots", "sample", "--days", s(&manifest), "--n", "7", "--seed", "3", "--out-prefix", s(&prefix), "--ext", "t4c"]);
    let input = dir.path().join("test_input.t4c");
    let truth = dir.path().join("test_truth.t4c");
    assert_eq!(io::read_tensor(&input).unwrap().shape(), [7, 12, 4, 5, 8]);
    assert_eq!(io::read_tensor(&truth).unwrap().shape(), [7, 6, 4, 5, 8]);
    assert_eq!(io::read_tensor(dir.path().join("test_meta.t4c")).unwrap().shape(), [7, 2]);
    let index = json(&dir.path().join("test_slots.json"));
    assert_eq!(index["seed"], 3);
    assert_eq!(index["slots"].as_array().unwrap().len(), 7);

    // same seed, same draw
    let again = dir.path().join("again");
    ok(&["slots", "sample", "--days", s(&manifest), "--n", "7", "--seed", "3", "--out-prefix", s(&again), "--ext", "t4c"]);
    assert_eq!(std::fs::read(&truth).unwrap(), std::fs::read(dir.path().join("again_truth.t4c")).unwrap());

    let pred = dir.path().join("pred.t4c");
    ok(&["baseline", "--method", "persistence", "--test", s(&input), "--out", s(&pred)]);
    assert_eq!(io::read_tensor(&pred).unwrap().shape(), [7, 6, 4, 5, 8]);

    let report = dir.path().join("score.json");
    ok(&["score", "--pred", s(&truth), "--truth", s(&truth), "--report", s(&report)]);
    let r = json(&report);
    assert_eq!(r["mse_all"], 0.0);
    assert_eq!(r["n_tests"], 7);

    ok(&["score", "--pred", s(&pred), "--truth", s(&truth), "--report", s(&report)]);
    let r = json(&report);
    let (all, vol, speed) = (r["mse_all"].as_f64().unwrap(), r["mse_volume"].as_f64().unwrap(), r["mse_speed"].as_f64().unwrap());
    assert!(all > 0.0);
    assert!((all - (vol + speed) / 2.0).abs() < 1e-9 * all);

    // an all-zero static tensor masks everything away in both-mode
    let st = dir.path().join("static.t4c");
    io::save(&st, &t4c_core::StaticTensor::zeros(4, 5).to_tensor()).unwrap();
    ok(&["score", "--pred", s(&pred), "--truth", s(&truth), "--mask", s(&st), "--mask-mode", "both", "--report", s(&report)]);
    assert_eq!(json(&report)["mse_all"], 0.0);
    ok(&["score", "--pred", s(&pred), "--truth", s(&truth), "--mask", s(&st), "--mask-mode", "pred-only", "--report", s(&report)]);
    assert!(json(&report)["mse_all"].as_f64().unwrap() > 0.0);

    // directories pair by file name
    let (pd, td) = (dir.path().join("preds"), dir.path().join("truths"));
    std::fs::create_dir_all(&pd).unwrap();
    std::fs::create_dir_all(&td).unwrap();
    std::fs::copy(&pred, pd.join("a.t4c")).unwrap();
    std::fs::copy(&truth, td.join("a.t4c")).unwrap();
    ok(&["score", "--pred", s(&pd), "--truth", s(&td), "--report", s(&report)]);
    assert_eq!(json(&report)["mse_all"].as_f64().unwrap(), all);
    std::fs::copy(&truth, td.join("b.t4c")).unwrap();
    assert!(!t4c(&["score", "--pred", s(&pd), "--truth", s(&td), "--report", s(&report)]).status.success());

    let csv = dir.path().join("std.csv");
    ok(&["analyze", "mse-std", "--pred", s(&pred), "--inputs", s(&input), "--truth", s(&truth), "--channel", "speed", "--bin-width", "10", "--out", s(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().count() > 1);

    let stats = dir.path().join("pixels.csv");
    ok(&["analyze", "pixel-stats", "--truth", s(&truth), "--out", s(&stats)]);
    let text = std::fs::read_to_string(&stats).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 5 * 4);
    assert!(text.starts_with("row,col,heading,vol_mean,vol_std,speed_mean,speed_std"));

    assert!(!t4c(&["baseline", "--method", "oracle", "--test", s(&input), "--out", s(&pred)]).status.success());
}

#[test]
fn daily_volume_and_pixel_series() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_days(dir.path(), 2);
    let out = dir.path().join("volume.csv");
    ok(&["analyze", "daily-volume", "--days", s(&manifest), "--label", "pre", "--out", s(&out)]);
    ok(&["analyze", "daily-volume", "--days", s(&manifest), "--label", "post", "--out", s(&out), "--append"]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 288);
    assert_eq!(text.matches("bin,value,label").count(), 1);
    assert!(text.lines().nth(289).unwrap().ends_with(",post"));

    let day = dir.path().join("day0.t4c");
    let series = dir.path().join("pixel.csv");
    ok(&["analyze", "pixel", "--day", s(&day), "--row", "1", "--col", "2", "--heading", "SW", "--out", s(&series)]);
    let m = io::read_movie(&day).unwrap();
    let lines: Vec<String> = std::fs::read_to_string(&series).unwrap().lines().map(String::from).collect();
    assert_eq!(lines[0], "bin,volume,speed");
    assert_eq!(lines[11], format!("10,{},{}", m.get(10, 1, 2, 4), m.get(10, 1, 2, 5)));

    let day1 = dir.path().join("day1.t4c");
    ok(&["analyze", "pixel", "--day", s(&day), "--day", s(&day1), "--row", "1", "--col", "2", "--heading", "SW", "--out", s(&series)]);
    assert!(std::fs::read_to_string(&series).unwrap().starts_with("bin,volume_mean,volume_std,speed_mean,speed_std"));
    assert!(!t4c(&["analyze", "pixel", "--day", s(&day), "--row", "9", "--col", "2", "--heading", "SW", "--out", s(&series)]).status.success());
}

#[test]
fn outlier_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut day: MovieTensor = synth::busy_day(5, 6, 2);
    synth::inject_jam(&mut day, DirectionalPixel::new(2, 3, HeadingQuadrant::SE), 120, 4);
    let day_path = dir.path().join("day.t4c");
    io::write_movie(&day_path, &day).unwrap();

    let events = dir.path().join("events.csv");
    ok(&["outliers", "detect", "--day", s(&day_path), "--out", s(&events)]);
    assert_eq!(std::fs::read_to_string(&events).unwrap(), "row,col,heading,start_bin,duration\n2,3,SE,120,4\n");

    let strict = dir.path().join("criteria.json");
    std::fs::write(&strict, r#"{"vol_mean_factor": 3.0}"#).unwrap();
    let none = dir.path().join("none.csv");
    ok(&["outliers", "detect", "--day", s(&day_path), "--criteria", s(&strict), "--out", s(&none)]);
    assert_eq!(std::fs::read_to_string(&none).unwrap().lines().count(), 1);

    let prefix = dir.path().join("jam");
    ok(&["outliers", "make-tests", "--day", s(&day_path), "--date", "2020-03-10", "--events", s(&events), "--out-prefix", s(&prefix), "--ext", "t4c"]);
    let input = io::read_tensor(dir.path().join("jam_input.t4c")).unwrap().unstack().unwrap();
    // the last input frame is the first jammed bin
    assert_eq!(input[0].get(11, 2, 3, 2), 40);
    assert_eq!(input[0].get(10, 2, 3, 2), 20);

    let truth = dir.path().join("jam_truth.t4c");
    let report = dir.path().join("outlier.json");
    ok(&["outliers", "score", "--pred", s(&truth), "--truth", s(&truth), "--events", s(&dir.path().join("jam_events.csv")), "--report", s(&report)]);
    let r = json(&report);
    assert_eq!(r["mse"], 0.0);
    assert_eq!(r["n_values"], 12);
}
