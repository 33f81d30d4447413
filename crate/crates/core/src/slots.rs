//! Test-slot sampling and the test file triple.
//!
//! A slot is one hour of input (12 frames) and six ground-truth frames at
//! 5, 10, 15, 30, 45 and 60 minutes past the last input frame.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MovieTensor, BINS_PER_DAY};
use crate::io::{self, Tensor};

pub const INPUT_FRAMES: usize = 12;
/// Truth frame offsets relative to the slot's first input frame.
pub const TRUTH_OFFSETS: [usize; 6] = [12, 13, 14, 17, 20, 23];
/// Largest start bin exposed in test metadata.
pub const MAX_START_BIN: usize = 240;
pub const STARTS_PER_DAY: usize = MAX_START_BIN + 1;
/// Identifies the sampling procedure so other implementations can replay it.
pub const SAMPLER_ID: &str = "chacha8/rand-0.8-seed_from_u64/index-sample";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSlot {
    pub city: String,
    pub date: NaiveDate,
    pub start_bin: usize,
    pub input: MovieTensor,
    pub truth: MovieTensor,
}

impl TestSlot {
    /// Monday = 0 ... Sunday = 6.
    pub fn day_of_week(&self) -> u8 {
        day_of_week(self.date)
    }

    pub fn meta(&self) -> [u8; 2] {
        [self.day_of_week(), self.start_bin as u8]
    }
}

pub fn day_of_week(date: NaiveDate) -> u8 {
    date.weekday().num_days_from_monday() as u8
}

pub fn input_frames(start_bin: usize) -> Vec<usize> {
    (start_bin..start_bin + INPUT_FRAMES).collect()
}

pub fn truth_frames(start_bin: usize) -> Vec<usize> {
    TRUTH_OFFSETS.iter().map(|o| start_bin + o).collect()
}

/// Cut the slot starting at `start_bin` out of a full day.
pub fn materialize(city: &str, date: NaiveDate, day: &MovieTensor, start_bin: usize) -> Result<TestSlot> {
    if day.frames() != BINS_PER_DAY {
        return Err(Error::invalid(format!(
            "day tensor for {date} has {} frames, expected {BINS_PER_DAY}",
            day.frames()
        )));
    }
    if start_bin + TRUTH_OFFSETS[5] >= BINS_PER_DAY {
        return Err(Error::invalid(format!("slot starting at bin {start_bin} runs past midnight")));
    }
    Ok(TestSlot {
        city: city.to_string(),
        date,
        start_bin,
        input: day.select_frames(&input_frames(start_bin))?,
        truth: day.select_frames(&truth_frames(start_bin))?,
    })
}

/// Draw `n` distinct `(day index, start bin)` pairs, deterministically from `seed`.
pub fn sample_slot_keys(n_days: usize, n: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = n_days * STARTS_PER_DAY;
    if n == 0 {
        return Err(Error::invalid("must sample at least one slot"));
    }
    if n > total {
        return Err(Error::invalid(format!(
            "requested {n} slots but only {total} (day, start) pairs exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, total, n)
        .into_iter()
        .map(|i| (i / STARTS_PER_DAY, i % STARTS_PER_DAY))
        .collect())
}

pub fn sample_slots(city: &str, days: &[(NaiveDate, MovieTensor)], n: usize, seed: u64) -> Result<Vec<TestSlot>> {
    sample_slot_keys(days.len(), n, seed)?
        .into_iter()
        .map(|(d, start)| materialize(city, days[d].0, &days[d].1, start))
        .collect()
}

/// Stacked `(n, 12, ...)` inputs, `(n, 6, ...)` truths and `(n, 2)` metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestFiles {
    pub inputs: Tensor,
    pub truth: Tensor,
    pub meta: Tensor,
}

pub fn split_test_file(slots: &[TestSlot]) -> Result<TestFiles> {
    if slots.is_empty() {
        return Err(Error::invalid("no test slots to split"));
    }
    let inputs: Vec<MovieTensor> = slots.iter().map(|s| s.input.clone()).collect();
    let truth: Vec<MovieTensor> = slots.iter().map(|s| s.truth.clone()).collect();
    let meta: Vec<u8> = slots.iter().flat_map(|s| s.meta()).collect();
    Ok(TestFiles {
        inputs: Tensor::stack(&inputs)?,
        truth: Tensor::stack(&truth)?,
        meta: Tensor::new(vec![slots.len(), 2], meta)?,
    })
}

/// Hidden per-slot bookkeeping written next to the tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotIndex {
    pub city: String,
    pub sampler: String,
    pub seed: Option<u64>,
    pub slots: Vec<SlotEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub date: NaiveDate,
    pub start_bin: usize,
    pub day_of_week: u8,
}

impl SlotIndex {
    pub fn for_slots(slots: &[TestSlot], seed: Option<u64>) -> Self {
        SlotIndex {
            city: slots.first().map(|s| s.city.clone()).unwrap_or_default(),
            sampler: SAMPLER_ID.to_string(),
            seed,
            slots: slots
                .iter()
                .map(|s| SlotEntry {
                    date: s.date,
                    start_bin: s.start_bin,
                    day_of_week: s.day_of_week(),
                })
                .collect(),
        }
    }
}

/// Paths of the files making up one test set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPaths {
    pub input: PathBuf,
    pub truth: PathBuf,
    pub meta: PathBuf,
    pub index: PathBuf,
}

impl TestPaths {
    pub fn new(prefix: &Path, ext: &str) -> Self {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        TestPaths {
            input: with(&format!("_input.{ext}")),
            truth: with(&format!("_truth.{ext}")),
            meta: with(&format!("_meta.{ext}")),
            index: with("_slots.json"),
        }
    }
}

pub fn write_test_files(paths: &TestPaths, slots: &[TestSlot], seed: Option<u64>) -> Result<()> {
    let files = split_test_file(slots)?;
    io::save(&paths.input, &files.inputs)?;
    io::save(&paths.truth, &files.truth)?;
    io::save(&paths.meta, &files.meta)?;
    let index = serde_json::to_string_pretty(&SlotIndex::for_slots(slots, seed))?;
    std::fs::write(&paths.index, index).map_err(|e| Error::io(&paths.index, e))
}

pub fn read_test_files(paths: &TestPaths) -> Result<Vec<TestSlot>> {
    let inputs = io::read_tensor(&paths.input)?.unstack()?;
    let truth = io::read_tensor(&paths.truth)?.unstack()?;
    let meta = io::read_tensor(&paths.meta)?;
    let text = std::fs::read_to_string(&paths.index).map_err(|e| Error::io(&paths.index, e))?;
    let index: SlotIndex = serde_json::from_str(&text)?;
    let n = index.slots.len();
    if inputs.len() != n || truth.len() != n || meta.shape() != [n, 2] {
        return Err(Error::invalid(format!(
            "test files disagree on slot count: index {n}, inputs {}, truth {}, meta {:?}",
            inputs.len(),
            truth.len(),
            meta.shape()
        )));
    }
    let slots = index
        .slots
        .into_iter()
        .zip(inputs.into_iter().zip(truth))
        .map(|(e, (input, truth))| TestSlot {
            city: index.city.clone(),
            date: e.date,
            start_bin: e.start_bin,
            input,
            truth,
        })
        .collect::<Vec<_>>();
    for (s, m) in slots.iter().zip(meta.data().chunks_exact(2)) {
        if s.meta() != [m[0], m[1]] {
            return Err(Error::invalid(format!(
                "metadata {m:?} disagrees with slot {} / {}",
                s.date, s.start_bin
            )));
        }
    }
    Ok(slots)
}
