//! Static road tensor derivation from a high-resolution road raster.
//!
//! The raster is 10x the grid resolution on each axis. Channel 0 of the
//! result is a downsampled road-density map; channels 1..=8 flag whether a
//! cell's roads connect to the neighbor in each of the eight Moore
//! directions, clockwise from north. Diagonal neighbors whose road pixels only
//! meet around a corner are still connected when a short high-res path links
//! them.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::CityConfig;
use crate::io::Tensor;

/// High-res pixels per low-res cell along each axis.
pub const UPSCALE: usize = 10;
/// Longest high-res path (in edges) that still links two diagonal cells.
pub const DETOUR_MAX_EDGES: usize = 7;
pub const WHITE: u8 = 255;
pub const STATIC_CHANNELS: usize = 9;

/// Moore directions in channel order (channel = 1 + index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::N,
        Direction::NE,
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn channel(self) -> usize {
        1 + self.index()
    }

    /// (row delta, col delta); rows grow southwards.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::N => (-1, 0),
            Direction::NE => (-1, 1),
            Direction::E => (0, 1),
            Direction::SE => (1, 1),
            Direction::S => (1, 0),
            Direction::SW => (1, -1),
            Direction::W => (0, -1),
            Direction::NW => (-1, -1),
        }
    }

    pub fn opposite(self) -> Direction {
        Direction::ALL[(self.index() + 4) % 8]
    }

    pub fn is_diagonal(self) -> bool {
        self.index() % 2 == 1
    }
}

/// Gray-scale road raster, 255 meaning no road.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighResRaster {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl HighResRaster {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![pixels.len()],
            });
        }
        Ok(HighResRaster { rows, cols, pixels })
    }

    pub fn blank(rows: usize, cols: usize) -> Self {
        HighResRaster {
            rows,
            cols,
            pixels: vec![WHITE; rows * cols],
        }
    }

    /// Read a binary PGM (P5) or a rank-2 tensor container.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut magic = [0u8; 2];
        {
            use std::io::Read;
            let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        }
        if magic == *b"P5" || magic == *b"P2" {
            let img = image::ImageReader::open(path)
                .map_err(|e| Error::io(path, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(path, e))?
                .decode()?
                .to_luma8();
            let (w, h) = img.dimensions();
            return HighResRaster::new(h as usize, w as usize, img.into_raw());
        }
        let t = crate::io::read_tensor(path)?;
        HighResRaster::from_tensor(t)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [rows, cols] => HighResRaster::new(rows, cols, t.into_data()),
            _ => Err(Error::invalid(format!(
                "raster tensor must be rank 2, got shape {:?}",
                t.shape()
            ))),
        }
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::ImageEncoder;
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        PnmEncoder::new(&mut w)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.cols as u32, self.rows as u32, image::ExtendedColorType::L8)?;
        std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.cols + col] = value;
    }

    fn low_res_dims(&self) -> Result<(usize, usize)> {
        if !self.rows.is_multiple_of(UPSCALE) || !self.cols.is_multiple_of(UPSCALE) || self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid(format!(
                "raster {}x{} is not a non-empty multiple of {UPSCALE}",
                self.rows, self.cols
            )));
        }
        Ok((self.rows / UPSCALE, self.cols / UPSCALE))
    }

    fn check_city(&self, cfg: &CityConfig) -> Result<()> {
        if self.rows != cfg.rows * UPSCALE || self.cols != cfg.cols * UPSCALE {
            return Err(Error::ShapeMismatch {
                expected: vec![cfg.rows * UPSCALE, cfg.cols * UPSCALE],
                actual: vec![self.rows, self.cols],
            });
        }
        Ok(())
    }
}

/// Mean darkness of each 10x10 block, rounded half up.
pub fn downsample_grayscale(r: &HighResRaster) -> Result<Vec<u8>> {
    let (rows, cols) = r.low_res_dims()?;
    let mut out = vec![0u8; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(lr, line)| {
        for (lc, cell) in line.iter_mut().enumerate() {
            let mut darkness = 0u32;
            for y in lr * UPSCALE..(lr + 1) * UPSCALE {
                let row = &r.pixels[y * r.cols + lc * UPSCALE..y * r.cols + (lc + 1) * UPSCALE];
                darkness += row.iter().map(|&p| (WHITE - p) as u32).sum::<u32>();
            }
            let n = (UPSCALE * UPSCALE) as u32;
            // integer round-half-up of darkness / n
            *cell = ((2 * darkness + n) / (2 * n)) as u8;
        }
    });
    Ok(out)
}

/// Non-white pixels with implicit edges between every Moore-adjacent pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelGraph {
    rows: usize,
    cols: usize,
    nodes: Vec<bool>,
}

const MOORE: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl PixelGraph {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_node(&self, row: usize, col: usize) -> bool {
        self.nodes[row * self.cols + col]
    }

    fn is_node_at(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.rows
            && (col as usize) < self.cols
            && self.is_node(row as usize, col as usize)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().filter(|&&n| n).count()
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        let forward = [(0isize, 1isize), (1, -1), (1, 0), (1, 1)];
        (0..self.rows)
            .into_par_iter()
            .map(|r| {
                let mut n = 0;
                for c in 0..self.cols {
                    if !self.is_node(r, c) {
                        continue;
                    }
                    for (dr, dc) in forward {
                        if self.is_node_at(r as isize + dr, c as isize + dc) {
                            n += 1;
                        }
                    }
                }
                n
            })
            .sum()
    }

    pub fn has_edge(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        a != b
            && a.0.abs_diff(b.0) <= 1
            && a.1.abs_diff(b.1) <= 1
            && self.is_node(a.0, a.1)
            && self.is_node(b.0, b.1)
    }

    pub fn neighbors(&self, row: usize, col: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        MOORE.iter().filter_map(move |&(dr, dc)| {
            let (r, c) = (row as isize + dr, col as isize + dc);
            self.is_node_at(r, c).then_some((r as usize, c as usize))
        })
    }
}

pub fn build_pixel_graph(r: &HighResRaster) -> PixelGraph {
    PixelGraph {
        rows: r.rows,
        cols: r.cols,
        nodes: r.pixels.iter().map(|&p| p < WHITE).collect(),
    }
}

/// Half-open pixel rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: isize,
    r1: isize,
    c0: isize,
    c1: isize,
}

impl Rect {
    fn block(row: usize, col: usize) -> Rect {
        let (r, c, s) = (row as isize, col as isize, UPSCALE as isize);
        Rect {
            r0: r * s,
            r1: (r + 1) * s,
            c0: c * s,
            c1: (c + 1) * s,
        }
    }

    fn grow(self, by: isize) -> Rect {
        Rect {
            r0: self.r0 - by,
            r1: self.r1 + by,
            c0: self.c0 - by,
            c1: self.c1 + by,
        }
    }

    fn intersect(self, o: Rect) -> Rect {
        Rect {
            r0: self.r0.max(o.r0),
            r1: self.r1.min(o.r1),
            c0: self.c0.max(o.c0),
            c1: self.c1.min(o.c1),
        }
    }

    fn is_empty(&self) -> bool {
        self.r0 >= self.r1 || self.c0 >= self.c1
    }

    fn contains(&self, r: isize, c: isize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }
}

/// Whether some high-res edge joins block `u` to its neighbor block `v`.
fn direct_link(g: &PixelGraph, u: Rect, v: Rect) -> bool {
    // only pixels within one step of the other block can share an edge
    let border = u.intersect(v.grow(1));
    for r in border.r0..border.r1 {
        for c in border.c0..border.c1 {
            if !g.is_node(r as usize, c as usize) {
                continue;
            }
            for (dr, dc) in MOORE {
                let (nr, nc) = (r + dr, c + dc);
                if v.contains(nr, nc) && g.is_node_at(nr, nc) {
                    return true;
                }
            }
        }
    }
    false
}

/// Shortest path length in edges from any node of block `u` to any node of
/// block `v`, if it is at most `max_edges`.
fn bounded_distance(g: &PixelGraph, u: Rect, v: Rect, max_edges: usize) -> Option<usize> {
    let reach = max_edges as isize;
    let sources = u.intersect(v.grow(reach));
    if sources.is_empty() {
        return None;
    }
    let bounds = Rect {
        r0: 0,
        r1: g.rows as isize,
        c0: 0,
        c1: g.cols as isize,
    };
    let window = sources.grow(reach).intersect(bounds);
    let width = (window.c1 - window.c0) as usize;
    let height = (window.r1 - window.r0) as usize;
    let idx = |r: isize, c: isize| (r - window.r0) as usize * width + (c - window.c0) as usize;
    let mut dist = vec![u8::MAX; width * height];
    let mut queue = VecDeque::new();
    for r in sources.r0..sources.r1 {
        for c in sources.c0..sources.c1 {
            if g.is_node(r as usize, c as usize) {
                dist[idx(r, c)] = 0;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[idx(r, c)] as usize;
        if d == max_edges {
            continue;
        }
        for (dr, dc) in MOORE {
            let (nr, nc) = (r + dr, c + dc);
            if !window.contains(nr, nc) || !g.is_node(nr as usize, nc as usize) {
                continue;
            }
            let slot = &mut dist[idx(nr, nc)];
            if *slot != u8::MAX {
                continue;
            }
            if v.contains(nr, nc) {
                return Some(d + 1);
            }
            *slot = (d + 1) as u8;
            queue.push_back((nr, nc));
        }
    }
    None
}

/// Whether low-res cell `(row, col)` connects to its neighbor in `dir`.
pub fn cells_connected(g: &PixelGraph, row: usize, col: usize, dir: Direction) -> bool {
    let (lrows, lcols) = (g.rows / UPSCALE, g.cols / UPSCALE);
    let (dr, dc) = dir.offset();
    let (nr, nc) = (row as isize + dr, col as isize + dc);
    if nr < 0 || nc < 0 || nr as usize >= lrows || nc as usize >= lcols {
        return false;
    }
    let u = Rect::block(row, col);
    let v = Rect::block(nr as usize, nc as usize);
    if direct_link(g, u, v) {
        return true;
    }
    dir.is_diagonal() && bounded_distance(g, u, v, DETOUR_MAX_EDGES).is_some()
}

/// Connectivity channels 1..=8 as a `(8, rows, cols)` 0/1 array.
pub fn derive_connectivity(g: &PixelGraph, cfg: &CityConfig) -> Result<Vec<u8>> {
    if g.rows != cfg.rows * UPSCALE || g.cols != cfg.cols * UPSCALE {
        return Err(Error::ShapeMismatch {
            expected: vec![cfg.rows * UPSCALE, cfg.cols * UPSCALE],
            actual: vec![g.rows, g.cols],
        });
    }
    let (rows, cols) = (cfg.rows, cfg.cols);
    let plane = rows * cols;
    // decide each unordered neighbor pair once, from its N/W/NW/NE endpoint
    let forward = [Direction::E, Direction::SE, Direction::S, Direction::SW];
    let links: Vec<Vec<(usize, Direction)>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut found = Vec::new();
            for c in 0..cols {
                for dir in forward {
                    if cells_connected(g, r, c, dir) {
                        found.push((c, dir));
                    }
                }
            }
            found
        })
        .collect();
    let mut out = vec![0u8; 8 * plane];
    for (r, row_links) in links.into_iter().enumerate() {
        for (c, dir) in row_links {
            let (dr, dc) = dir.offset();
            let (nr, nc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
            out[dir.index() * plane + r * cols + c] = 1;
            out[dir.opposite().index() * plane + nr * cols + nc] = 1;
        }
    }
    Ok(out)
}

/// `(9, rows, cols)` static tensor: density map plus 8 connectivity bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticTensor {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl StaticTensor {
    pub fn from_raw(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != STATIC_CHANNELS * rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![STATIC_CHANNELS, rows, cols],
                actual: vec![data.len()],
            });
        }
        Ok(StaticTensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        StaticTensor {
            rows,
            cols,
            data: vec![0; STATIC_CHANNELS * rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn channel(&self, ch: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> u8 {
        self.data[(ch * self.rows + row) * self.cols + col]
    }

    pub fn set(&mut self, ch: usize, row: usize, col: usize, value: u8) {
        self.data[(ch * self.rows + row) * self.cols + col] = value;
    }

    pub fn connected(&self, row: usize, col: usize, dir: Direction) -> bool {
        self.get(dir.channel(), row, col) != 0
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![STATIC_CHANNELS, self.rows, self.cols], self.data.clone())
            .expect("static payload matches shape")
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match *t.shape() {
            [STATIC_CHANNELS, rows, cols] => StaticTensor::from_raw(rows, cols, t.into_data()),
            _ => Err(Error::invalid(format!(
                "static tensor must have shape (9, rows, cols), got {:?}",
                t.shape()
            ))),
        }
    }
}

pub fn build_static(r: &HighResRaster, cfg: &CityConfig) -> Result<StaticTensor> {
    r.check_city(cfg)?;
    let mut data = downsample_grayscale(r)?;
    let g = build_pixel_graph(r);
    data.extend(derive_connectivity(&g, cfg)?);
    StaticTensor::from_raw(cfg.rows, cfg.cols, data)
}
