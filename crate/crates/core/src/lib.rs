//! Traffic map movie toolkit.
//!
//! GPS probes are aggregated into `(288, rows, cols, 8)` uint8 day tensors,
//! road rasters into 9-channel static tensors. On top of those sit
//! competition-style test slots, MSE scoring (plain, road-masked and
//! single-pixel outlier masked), reference baselines and a handful of
//! diagnostics emitted as CSV.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod metrics;
pub mod outliers;
pub mod slots;
pub mod static_graph;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{
    bin_of, cell_of, quadrant_of, CityConfig, DirectionalPixel, HeadingQuadrant, MovieTensor,
    BINS_PER_DAY, CHANNELS,
};
pub use ingest::{accumulate, finalize, DayAccumulator, IngestStats, Ingestor, ProbeRecord};
pub use io::{read_tensor, write_tensor, ContainerFormat, Tensor};
pub use metrics::{Mask, MaskMode, ScoreReport, StdBinReport};
pub use outliers::{OutlierCriteria, OutlierEvent};
pub use slots::TestSlot;
pub use static_graph::{HighResRaster, PixelGraph, StaticTensor};
