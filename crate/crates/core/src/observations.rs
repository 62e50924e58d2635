//! Observation sequences `Y = [y_1 … y_n]` and their on-disk format.
//!
//! Each observation is one column of `Y`, stored contiguously (row-major
//! pixels), so the matrix is column-major. Sequences that fit the memory
//! budget stay in memory; larger ones are spilled to a dataset file and
//! read back in column blocks.
//!
//! Dataset file layout, all little-endian:
//!
//! ```text
//! offset  size  field
//!      0     6  magic "MFBD\0\x01" (last byte = format version)
//!      6     2  reserved, zero
//!      8     8  y_rows    u64
//!     16     8  y_cols    u64
//!     24     8  n         u64
//!     32     4  dtype     u32 (1 = f64)
//!     36     4  flags     u32 (bit 0 truth, bit 1 psfs, bit 2 footprint)
//!     40     8  noise_var f64
//!     48     8  psf_rows  u64
//!     56     8  psf_cols  u64
//!     64     8  x_rows    u64 (0 without truth)
//!     72     8  x_cols    u64 (0 without truth)
//!     80        observations, n * |y| f64, frame after frame
//!               ground truth, |x| f64           (flag bit 0)
//!               footprint, |a| f64 of 0/1       (flag bit 2)
//!               psfs, n * |a| f64               (flag bit 1)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use tempfile::TempPath;

use crate::error::{MfbdError, Result};
use crate::footprint::Footprint;
use crate::image::{Image, Psf, Shape2};

pub const MAGIC: [u8; 6] = *b"MFBD\0\x01";
pub const HEADER_LEN: u64 = 80;
const DTYPE_F64: u32 = 1;
const FLAG_TRUTH: u32 = 1;
const FLAG_PSFS: u32 = 2;
const FLAG_FOOTPRINT: u32 = 4;

/// Default spill threshold for in-memory sequences.
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub y_shape: Shape2,
    pub n: usize,
    pub noise_var: f64,
    pub psf_shape: Shape2,
    pub x_shape: Option<Shape2>,
    pub has_psfs: bool,
    pub has_footprint: bool,
}

impl DatasetHeader {
    fn flags(&self) -> u32 {
        let mut f = 0;
        if self.x_shape.is_some() {
            f |= FLAG_TRUTH;
        }
        if self.has_psfs {
            f |= FLAG_PSFS;
        }
        if self.has_footprint {
            f |= FLAG_FOOTPRINT;
        }
        f
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[..6].copy_from_slice(&MAGIC);
        let put = |b: &mut [u8], at: usize, v: &[u8]| b[at..at + v.len()].copy_from_slice(v);
        put(&mut b, 8, &(self.y_shape.rows as u64).to_le_bytes());
        put(&mut b, 16, &(self.y_shape.cols as u64).to_le_bytes());
        put(&mut b, 24, &(self.n as u64).to_le_bytes());
        put(&mut b, 32, &DTYPE_F64.to_le_bytes());
        put(&mut b, 36, &self.flags().to_le_bytes());
        put(&mut b, 40, &self.noise_var.to_le_bytes());
        put(&mut b, 48, &(self.psf_shape.rows as u64).to_le_bytes());
        put(&mut b, 56, &(self.psf_shape.cols as u64).to_le_bytes());
        let (xr, xc) = self.x_shape.map_or((0, 0), |s| (s.rows, s.cols));
        put(&mut b, 64, &(xr as u64).to_le_bytes());
        put(&mut b, 72, &(xc as u64).to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN as usize {
            return Err(MfbdError::Format("truncated header".into()));
        }
        if b[..5] != MAGIC[..5] {
            return Err(MfbdError::Format("not a dataset file (bad magic)".into()));
        }
        if b[5] != MAGIC[5] {
            return Err(MfbdError::Format(format!(
                "unsupported dataset version {}",
                b[5]
            )));
        }
        let u64_at = |at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap()) as usize;
        let u32_at = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        if u32_at(32) != DTYPE_F64 {
            return Err(MfbdError::Format(format!("unsupported dtype {}", u32_at(32))));
        }
        let flags = u32_at(36);
        let noise_var = f64::from_le_bytes(b[40..48].try_into().unwrap());
        let x_shape = if flags & FLAG_TRUTH != 0 {
            Some(Shape2::new(u64_at(64), u64_at(72))?)
        } else {
            None
        };
        Ok(Self {
            y_shape: Shape2::new(u64_at(8), u64_at(16))?,
            n: u64_at(24),
            noise_var,
            psf_shape: Shape2::new(u64_at(48), u64_at(56))?,
            x_shape,
            has_psfs: flags & FLAG_PSFS != 0,
            has_footprint: flags & FLAG_FOOTPRINT != 0,
        })
    }

    fn observations_bytes(&self) -> u64 {
        (self.n * self.y_shape.len() * 8) as u64
    }

    fn truth_offset(&self) -> u64 {
        HEADER_LEN + self.observations_bytes()
    }

    fn footprint_offset(&self) -> u64 {
        self.truth_offset() + self.x_shape.map_or(0, |s| s.len() as u64 * 8)
    }

    fn psfs_offset(&self) -> u64 {
        self.footprint_offset()
            + if self.has_footprint {
                self.psf_shape.len() as u64 * 8
            } else {
                0
            }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    Memory(Arc<Vec<f64>>),
    File {
        path: PathBuf,
        // Keeps a spilled temporary file alive for as long as any clone.
        _temp: Option<Arc<TempPath>>,
    },
}

/// `n` observations of shape `y_shape`, accessed in column blocks.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    y_shape: Shape2,
    n: usize,
    storage: Storage,
}

impl ObservationSet {
    /// In-memory set from column-major data (`n` frames back to back).
    pub fn from_columns(y_shape: Shape2, data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || data.len() % y_shape.len() != 0 {
            return Err(MfbdError::Dimension(format!(
                "{} values is not a whole number of {y_shape} frames",
                data.len()
            )));
        }
        Ok(Self {
            y_shape,
            n: data.len() / y_shape.len(),
            storage: Storage::Memory(Arc::new(data)),
        })
    }

    pub fn from_images(frames: &[Image]) -> Result<Self> {
        let y_shape = frames
            .first()
            .ok_or_else(|| MfbdError::Config("empty observation list".into()))?
            .shape();
        let mut data = Vec::with_capacity(frames.len() * y_shape.len());
        for f in frames {
            if f.shape() != y_shape {
                return Err(MfbdError::Dimension("frames differ in shape".into()));
            }
            data.extend_from_slice(f.data());
        }
        Self::from_columns(y_shape, data)
    }

    /// Opens the observation section of a dataset file without loading it.
    pub fn open(path: &Path) -> Result<(Self, DatasetHeader)> {
        let header = read_header(path)?;
        let len = std::fs::metadata(path)?.len();
        if len < header.psfs_offset() {
            return Err(MfbdError::Format(format!(
                "{} is truncated ({len} bytes)",
                path.display()
            )));
        }
        Ok((
            Self {
                y_shape: header.y_shape,
                n: header.n,
                storage: Storage::File {
                    path: path.to_path_buf(),
                    _temp: None,
                },
            },
            header,
        ))
    }

    pub fn y_shape(&self) -> Shape2 {
        self.y_shape
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_in_memory(&self) -> bool {
        matches!(self.storage, Storage::Memory(_))
    }

    /// Frames per block for `block_bytes`, never less than one frame.
    pub fn block_columns(&self, block_bytes: usize) -> usize {
        (block_bytes / (self.y_shape.len() * 8)).clamp(1, self.n.max(1))
    }

    /// Default block size: `max(|y| elements, 1 MiB)`.
    pub fn default_block_bytes(&self) -> usize {
        (self.y_shape.len() * 8).max(1 << 20)
    }

    /// Calls `f(first_column, block)` for consecutive column blocks, in
    /// order. `block` holds `cols * |y|` values.
    pub fn for_each_block(
        &self,
        block_bytes: usize,
        mut f: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        let cols = self.block_columns(block_bytes);
        let frame = self.y_shape.len();
        match &self.storage {
            Storage::Memory(data) => {
                for (b, chunk) in data.chunks(cols * frame).enumerate() {
                    f(b * cols, chunk)?;
                }
            }
            Storage::File { path, .. } => {
                let mut reader = BufReader::new(File::open(path)?);
                reader.seek(SeekFrom::Start(HEADER_LEN))?;
                let mut bytes = vec![0u8; cols * frame * 8];
                let mut block = vec![0.0; cols * frame];
                let mut start = 0;
                while start < self.n {
                    let take = cols.min(self.n - start);
                    let nb = take * frame * 8;
                    reader.read_exact(&mut bytes[..nb])?;
                    for (v, chunk) in block.iter_mut().zip(bytes[..nb].chunks_exact(8)) {
                        *v = f64::from_le_bytes(chunk.try_into().unwrap());
                    }
                    f(start, &block[..take * frame])?;
                    start += take;
                }
            }
        }
        Ok(())
    }

    pub fn observation(&self, i: usize) -> Result<Image> {
        if i >= self.n {
            return Err(MfbdError::IndexOutOfRange(format!(
                "observation {i} of {}",
                self.n
            )));
        }
        let frame = self.y_shape.len();
        match &self.storage {
            Storage::Memory(data) => Ok(Image::from_vec(
                self.y_shape,
                data[i * frame..(i + 1) * frame].to_vec(),
            )),
            Storage::File { path, .. } => {
                let mut file = File::open(path)?;
                file.seek(SeekFrom::Start(HEADER_LEN + (i * frame * 8) as u64))?;
                let values = read_f64s(&mut file, frame)?;
                Ok(Image::from_vec(self.y_shape, values))
            }
        }
    }

    /// Mean over all pixels of all observations.
    pub fn mean_pixel(&self) -> Result<f64> {
        let mut sum = 0.0;
        self.for_each_block(self.default_block_bytes(), |_, b| {
            sum += b.iter().sum::<f64>();
            Ok(())
        })?;
        Ok(sum / (self.n * self.y_shape.len()) as f64)
    }

    /// Mean observation.
    pub fn mean_image(&self) -> Result<Image> {
        let frame = self.y_shape.len();
        let mut acc = vec![0.0; frame];
        self.for_each_block(self.default_block_bytes(), |_, b| {
            for col in b.chunks_exact(frame) {
                acc.iter_mut().zip(col).for_each(|(a, v)| *a += v);
            }
            Ok(())
        })?;
        let inv = 1.0 / self.n as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(Image::from_vec(self.y_shape, acc))
    }

    /// Dense `|y| x n` matrix. Fails when it would exceed `budget_bytes`.
    pub fn to_matrix(&self, budget_bytes: usize) -> Result<DMatrix<f64>> {
        let bytes = self.y_shape.len() * self.n * 8;
        if bytes > budget_bytes {
            return Err(MfbdError::Infeasible(format!(
                "dense {}x{} matrix needs {bytes} bytes, budget is {budget_bytes}",
                self.y_shape.len(),
                self.n
            )));
        }
        let frame = self.y_shape.len();
        let mut m = DMatrix::zeros(frame, self.n);
        self.for_each_block(self.default_block_bytes(), |start, b| {
            for (j, col) in b.chunks_exact(frame).enumerate() {
                m.column_mut(start + j).copy_from_slice(col);
            }
            Ok(())
        })?;
        Ok(m)
    }

    /// Centered `section` of every frame, kept in memory.
    pub fn cropped_centered(&self, section: Shape2) -> Result<ObservationSet> {
        if !section.fits_in(self.y_shape) {
            return Err(MfbdError::Dimension(format!(
                "section {section} larger than frames {}",
                self.y_shape
            )));
        }
        let frame = self.y_shape.len();
        let r0 = (self.y_shape.rows - section.rows) / 2;
        let c0 = (self.y_shape.cols - section.cols) / 2;
        let mut out = Vec::with_capacity(section.len() * self.n);
        self.for_each_block(self.default_block_bytes(), |_, b| {
            for col in b.chunks_exact(frame) {
                for r in 0..section.rows {
                    let s = (r0 + r) * self.y_shape.cols + c0;
                    out.extend_from_slice(&col[s..s + section.cols]);
                }
            }
            Ok(())
        })?;
        Self::from_columns(section, out)
    }
}

/// Streams frames into memory, spilling to a temporary dataset file once
/// the memory budget would be exceeded.
pub struct ObservationWriter {
    y_shape: Shape2,
    n: usize,
    written: usize,
    sink: Sink,
}

enum Sink {
    Memory(Vec<f64>),
    File {
        writer: BufWriter<File>,
        path: TempPath,
    },
}

impl ObservationWriter {
    pub fn new(y_shape: Shape2, n: usize, memory_budget: usize) -> Result<Self> {
        let bytes = y_shape.len() * n * 8;
        let sink = if bytes <= memory_budget {
            Sink::Memory(Vec::with_capacity(y_shape.len() * n))
        } else {
            let tmp = tempfile::NamedTempFile::new()?;
            let (file, path) = tmp.into_parts();
            let mut writer = BufWriter::new(file);
            let header = DatasetHeader {
                y_shape,
                n,
                noise_var: 0.0,
                psf_shape: Shape2::of(1, 1),
                x_shape: None,
                has_psfs: false,
                has_footprint: false,
            };
            writer.write_all(&header.to_bytes())?;
            Sink::File { writer, path }
        };
        Ok(Self {
            y_shape,
            n,
            written: 0,
            sink,
        })
    }

    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        if frame.len() != self.y_shape.len() {
            return Err(MfbdError::Dimension("frame size mismatch".into()));
        }
        if self.written == self.n {
            return Err(MfbdError::Config("more frames than announced".into()));
        }
        match &mut self.sink {
            Sink::Memory(v) => v.extend_from_slice(frame),
            Sink::File { writer, .. } => write_f64s(writer, frame)?,
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<ObservationSet> {
        if self.written != self.n {
            return Err(MfbdError::Config(format!(
                "{} of {} frames written",
                self.written, self.n
            )));
        }
        match self.sink {
            Sink::Memory(v) => ObservationSet::from_columns(self.y_shape, v),
            Sink::File { mut writer, path } => {
                writer.flush()?;
                drop(writer);
                Ok(ObservationSet {
                    y_shape: self.y_shape,
                    n: self.n,
                    storage: Storage::File {
                        path: path.to_path_buf(),
                        _temp: Some(Arc::new(path)),
                    },
                })
            }
        }
    }
}

/// Everything stored in a dataset file besides the observations.
#[derive(Debug, Clone, Default)]
pub struct DatasetExtras {
    pub noise_var: f64,
    pub psf_shape: Option<Shape2>,
    pub ground_truth: Option<Image>,
    pub footprint: Option<Footprint>,
    pub psfs: Option<Vec<Psf>>,
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    let mut file = File::open(path)?;
    let mut bytes = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut bytes)
        .map_err(|_| MfbdError::Format(format!("{} is too short", path.display())))?;
    DatasetHeader::from_bytes(&bytes)
}

/// Writes a complete dataset file.
pub fn write_dataset(path: &Path, obs: &ObservationSet, extras: &DatasetExtras) -> Result<()> {
    let psf_shape = extras
        .psf_shape
        .or_else(|| extras.footprint.as_ref().map(|f| f.shape()))
        .or_else(|| extras.psfs.as_ref().and_then(|p| p.first()).map(|p| p.shape()))
        .ok_or_else(|| MfbdError::Config("dataset needs a filter shape".into()))?;
    if let Some(psfs) = &extras.psfs {
        if psfs.len() != obs.len() || psfs.iter().any(|p| p.shape() != psf_shape) {
            return Err(MfbdError::Dimension("stored filters do not match".into()));
        }
    }
    let header = DatasetHeader {
        y_shape: obs.y_shape(),
        n: obs.len(),
        noise_var: extras.noise_var,
        psf_shape,
        x_shape: extras.ground_truth.as_ref().map(|x| x.shape()),
        has_psfs: extras.psfs.is_some(),
        has_footprint: extras.footprint.is_some(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.to_bytes())?;
    obs.for_each_block(obs.default_block_bytes(), |_, b| write_f64s(&mut w, b))?;
    if let Some(x) = &extras.ground_truth {
        write_f64s(&mut w, x.data())?;
    }
    if let Some(h) = &extras.footprint {
        write_f64s(&mut w, h.to_image().data())?;
    }
    if let Some(psfs) = &extras.psfs {
        for p in psfs {
            write_f64s(&mut w, p.data())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the optional sections of a dataset file.
pub fn read_extras(path: &Path, header: &DatasetHeader) -> Result<DatasetExtras> {
    let mut file = BufReader::new(File::open(path)?);
    let mut extras = DatasetExtras {
        noise_var: header.noise_var,
        psf_shape: Some(header.psf_shape),
        ..Default::default()
    };
    if let Some(xs) = header.x_shape {
        file.seek(SeekFrom::Start(header.truth_offset()))?;
        extras.ground_truth = Some(Image::new(xs, read_f64s(&mut file, xs.len())?)?);
    }
    if header.has_footprint {
        file.seek(SeekFrom::Start(header.footprint_offset()))?;
        let values = read_f64s(&mut file, header.psf_shape.len())?;
        extras.footprint = Some(Footprint::new(
            header.psf_shape,
            values.iter().map(|&v| v != 0.0).collect(),
        )?);
    }
    if header.has_psfs {
        file.seek(SeekFrom::Start(header.psfs_offset()))?;
        let mut psfs = Vec::with_capacity(header.n);
        for _ in 0..header.n {
            let v = read_f64s(&mut file, header.psf_shape.len())?;
            psfs.push(Psf::from_vec(header.psf_shape, v)?);
        }
        extras.psfs = Some(psfs);
    }
    Ok(extras)
}
