//! Tensor containers.
//!
//! The canonical container is an HDF5 file holding one uint8 dataset named
//! `array`. A flat fallback holds the same payload without any external
//! tooling:
//!
//! ```text
//! "T4CT" | rank: u8 | dims: rank x u64 LE | payload: row-major u8
//! ```
//!
//! [`read_tensor`] sniffs the leading bytes, so callers never need to know
//! which container a file uses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MovieTensor, CHANNELS};

pub const DATASET_NAME: &str = "array";
pub const FLAT_MAGIC: &[u8; 4] = b"T4CT";
const HDF5_MAGIC: &[u8; 8] = b"\x89HDF\r\n\x1a\n";

/// Dense row-major uint8 tensor of arbitrary rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} bytes, payload has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn from_movie(m: &MovieTensor) -> Self {
        Tensor {
            shape: m.shape().to_vec(),
            data: m.data().to_vec(),
        }
    }

    pub fn into_movie(self) -> Result<MovieTensor> {
        match *self.shape {
            [t, r, c, CHANNELS] => MovieTensor::from_raw(t, r, c, self.data),
            _ => Err(Error::invalid(format!(
                "expected a (frames, rows, cols, 8) tensor, got {:?}",
                self.shape
            ))),
        }
    }

    /// Stack equally shaped movies along a new leading axis.
    pub fn stack(movies: &[MovieTensor]) -> Result<Self> {
        let first = movies
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let mut data = Vec::with_capacity(movies.len() * first.data().len());
        for m in movies {
            if m.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    expected: first.shape().to_vec(),
                    actual: m.shape().to_vec(),
                });
            }
            data.extend_from_slice(m.data());
        }
        let mut shape = vec![movies.len()];
        shape.extend_from_slice(&first.shape());
        Ok(Tensor { shape, data })
    }

    /// Split a `(n, frames, rows, cols, 8)` tensor into `n` movies; a rank-4
    /// tensor becomes a single movie.
    pub fn unstack(self) -> Result<Vec<MovieTensor>> {
        match *self.shape {
            [_, _, _, CHANNELS] => Ok(vec![self.into_movie()?]),
            [n, t, r, c, CHANNELS] => {
                let each = t * r * c * CHANNELS;
                if n == 0 {
                    return Ok(Vec::new());
                }
                self.data
                    .chunks_exact(each.max(1))
                    .map(|chunk| MovieTensor::from_raw(t, r, c, chunk.to_vec()))
                    .collect()
            }
            _ => Err(Error::invalid(format!(
                "expected a movie or a stack of movies, got shape {:?}",
                self.shape
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContainerFormat {
    Hdf5 { compress: bool },
    Flat,
}

impl ContainerFormat {
    /// `.h5`/`.hdf5` map to compressed HDF5, everything else to the flat format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("h5" | "hdf5") if cfg!(feature = "hdf5") => ContainerFormat::Hdf5 { compress: true },
            _ => ContainerFormat::Flat,
        }
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor, format: ContainerFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ContainerFormat::Flat => write_flat(path, t),
        ContainerFormat::Hdf5 { compress } => write_hdf5(path, t, compress),
    }
}

/// Write using the format implied by the file extension.
pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    write_tensor(path, t, ContainerFormat::from_path(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut head = [0u8; 8];
    let n = {
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_up_to(&mut f, &mut head).map_err(|e| Error::io(path, e))?
    };
    if n >= 4 && &head[..4] == FLAT_MAGIC {
        read_flat(path)
    } else if n == 8 && &head == HDF5_MAGIC {
        read_hdf5(path)
    } else {
        Err(Error::UnknownFormat {
            path: path.to_path_buf(),
        })
    }
}

pub fn read_movie(path: impl AsRef<Path>) -> Result<MovieTensor> {
    read_tensor(path)?.into_movie()
}

pub fn write_movie(path: impl AsRef<Path>, m: &MovieTensor) -> Result<()> {
    save(path, &Tensor::from_movie(m))
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn write_flat(path: &Path, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.shape.len()).map_err(|_| Error::invalid("tensor rank exceeds 255"))?;
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(FLAT_MAGIC).map_err(io)?;
    w.write_all(&[rank]).map_err(io)?;
    for &d in &t.shape {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    w.write_all(&t.data).map_err(io)?;
    w.flush().map_err(io)
}

fn read_flat(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: file_len,
    };
    let mut head = [0u8; 5];
    if read_up_to(&mut r, &mut head).map_err(|e| Error::io(path, e))? < 5 {
        return Err(truncated(5));
    }
    let rank = head[4] as usize;
    let header_len = 5 + 8 * rank as u64;
    let mut dims = vec![0u8; 8 * rank];
    if read_up_to(&mut r, &mut dims).map_err(|e| Error::io(path, e))? < dims.len() {
        return Err(truncated(header_len));
    }
    let shape: Vec<usize> = dims
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8-byte chunk")) as usize)
        .collect();
    let payload = shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| Error::invalid(format!("{}: shape {shape:?} overflows", path.display())))?;
    if file_len < header_len + payload {
        return Err(truncated(header_len + payload));
    }
    let mut data = vec![0u8; payload as usize];
    r.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    Tensor::new(shape, data)
}

#[cfg(feature = "hdf5")]
fn write_hdf5(path: &Path, t: &Tensor, compress: bool) -> Result<()> {
    let file = hdf5::File::create(path)?;
    let mut builder = file.new_dataset::<u8>().shape(t.shape.clone());
    if compress && !t.data.is_empty() && !t.shape.is_empty() {
        // one leading-axis slice per chunk, capped near 4 MiB
        let mut chunk = t.shape.clone();
        chunk[0] = 1;
        let mut i = 1;
        while chunk.iter().product::<usize>() > (4 << 20) && i < chunk.len() {
            chunk[i] = 1;
            i += 1;
        }
        builder = builder.chunk(chunk).deflate(4);
    }
    let ds = builder.create(DATASET_NAME)?;
    ds.write_raw(&t.data)?;
    Ok(())
}

#[cfg(not(feature = "hdf5"))]
fn write_hdf5(path: &Path, _t: &Tensor, _compress: bool) -> Result<()> {
    Err(Error::invalid(format!(
        "{}: built without HDF5 support",
        path.display()
    )))
}

#[cfg(feature = "hdf5")]
fn read_hdf5(path: &Path) -> Result<Tensor> {
    let file = hdf5::File::open(path)?;
    let ds = file.dataset(DATASET_NAME).map_err(|_| Error::MissingDataset {
        path: path.to_path_buf(),
        name: DATASET_NAME.to_string(),
    })?;
    let dtype = ds.dtype()?;
    let desc = dtype.to_descriptor()?;
    if desc != hdf5::types::TypeDescriptor::Unsigned(hdf5::types::IntSize::U1) {
        return Err(Error::DtypeMismatch {
            path: path.to_path_buf(),
            found: format!("{desc}"),
        });
    }
    let shape = ds.shape();
    let data: Vec<u8> = ds.read_raw()?;
    Tensor::new(shape, data)
}

#[cfg(not(feature = "hdf5"))]
fn read_hdf5(path: &Path) -> Result<Tensor> {
    Err(Error::invalid(format!(
        "{}: built without HDF5 support",
        path.display()
    )))
}

/// Dataset manifest: `{"city": str, "days": {"YYYY-MM-DD": path}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub city: String,
    pub days: std::collections::BTreeMap<chrono::NaiveDate, PathBuf>,
}

impl Manifest {
    /// Relative day paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        if let Some(base) = path.parent() {
            for p in m.days.values_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Exclusive marker file held for the lifetime of the guard.
#[derive(Debug)]
pub struct LockFile {
    path: PathBuf,
}

impl LockFile {
    pub fn acquire(target: &Path) -> Result<Self> {
        let mut name = target.as_os_str().to_os_string();
        name.push(".lock");
        let path = PathBuf::from(name);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockFile { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(format!(
                "{} is locked by another writer ({})",
                target.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
