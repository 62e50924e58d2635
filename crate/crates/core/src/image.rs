//! Two-dimensional real rasters.
//!
//! Pixels are stored row-major: the flattened index of `(r, c)` is
//! `r * cols + c`. Every vectorised quantity in the crate (observations,
//! eigenvector images, PSFs, footprints) uses this order.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use crate::error::{MfbdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape2 {
    pub rows: usize,
    pub cols: usize,
}

impl Shape2 {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MfbdError::Dimension(format!(
                "shape must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    /// Panics on zero extents; meant for literals in tests and presets.
    pub const fn of(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0);
        Self { rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Componentwise `self <= other`.
    pub fn fits_in(&self, other: Shape2) -> bool {
        self.rows <= other.rows && self.cols <= other.cols
    }

    /// Fits in `other` and is smaller in at least one dimension.
    pub fn fits_smaller(&self, other: Shape2) -> bool {
        self.fits_in(other) && *self != other
    }

    /// Output shape of a valid convolution of an image of shape `self`
    /// with a filter of shape `filter`.
    pub fn valid(&self, filter: Shape2) -> Result<Shape2> {
        if !filter.fits_in(*self) {
            return Err(MfbdError::Dimension(format!(
                "filter {filter} does not fit in image {self}"
            )));
        }
        Ok(Shape2 {
            rows: self.rows - filter.rows + 1,
            cols: self.cols - filter.cols + 1,
        })
    }

    /// Output shape of a full convolution of `self` with `other`.
    pub fn full(&self, other: Shape2) -> Shape2 {
        Shape2 {
            rows: self.rows + other.rows - 1,
            cols: self.cols + other.cols - 1,
        }
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols);
        r * self.cols + c
    }

    pub fn coords(&self, flat: usize) -> (usize, usize) {
        (flat / self.cols, flat % self.cols)
    }
}

impl fmt::Display for Shape2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Shape2 {
    type Err = MfbdError;

    /// `"RxC"`, e.g. `"128x128"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || MfbdError::Config(format!("bad shape {s:?}, expected RxC"));
        let (r, c) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        Shape2::new(r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape2,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape2, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(MfbdError::Dimension(format!(
                "{} values supplied for a {shape} image",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(MfbdError::Numeric(format!(
                "non-finite pixel at flat index {pos}"
            )));
        }
        Ok(Self { shape, data })
    }

    /// Skips the finiteness scan. Length is still checked in debug builds.
    pub(crate) fn from_vec(shape: Shape2, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Shape2) -> Self {
        Self::from_vec(shape, vec![0.0; shape.len()])
    }

    pub fn filled(shape: Shape2, value: f64) -> Self {
        Self::from_vec(shape, vec![value; shape.len()])
    }

    pub fn from_fn(shape: Shape2, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.rows {
            for c in 0..shape.cols {
                data.push(f(r, c));
            }
        }
        Self::from_vec(shape, data)
    }

    /// Kronecker delta with a single one at `(r, c)`.
    pub fn delta(shape: Shape2, r: usize, c: usize) -> Result<Self> {
        if r >= shape.rows || c >= shape.cols {
            return Err(MfbdError::IndexOutOfRange(format!(
                "({r}, {c}) outside {shape}"
            )));
        }
        let mut img = Self::zeros(shape);
        img.data[shape.index(r, c)] = 1.0;
        Ok(img)
    }

    pub fn shape(&self) -> Shape2 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.shape.index(r, c)]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let i = self.shape.index(r, c);
        self.data[i] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Image) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Image {
        Self::from_vec(self.shape, self.data.iter().map(|v| v * factor).collect())
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Copy of the `shape`-sized window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, shape: Shape2) -> Result<Image> {
        if r0 + shape.rows > self.shape.rows || c0 + shape.cols > self.shape.cols {
            return Err(MfbdError::Dimension(format!(
                "window {shape} at ({r0}, {c0}) exceeds {}",
                self.shape
            )));
        }
        let mut out = Vec::with_capacity(shape.len());
        for r in 0..shape.rows {
            let start = (r0 + r) * self.shape.cols + c0;
            out.extend_from_slice(&self.data[start..start + shape.cols]);
        }
        Ok(Self::from_vec(shape, out))
    }

    /// Centered window of the given shape.
    pub fn crop_centered(&self, shape: Shape2) -> Result<Image> {
        if !shape.fits_in(self.shape) {
            return Err(MfbdError::Dimension(format!(
                "section {shape} larger than {}",
                self.shape
            )));
        }
        self.crop(
            (self.shape.rows - shape.rows) / 2,
            (self.shape.cols - shape.cols) / 2,
            shape,
        )
    }

    /// Zero canvas of `shape` with `self` placed at `(r0, c0)`.
    pub fn padded(&self, shape: Shape2, r0: usize, c0: usize) -> Result<Image> {
        if r0 + self.shape.rows > shape.rows || c0 + self.shape.cols > shape.cols {
            return Err(MfbdError::Dimension(format!(
                "{} at ({r0}, {c0}) does not fit in {shape}",
                self.shape
            )));
        }
        let mut out = Image::zeros(shape);
        for r in 0..self.shape.rows {
            let dst = (r0 + r) * shape.cols + c0;
            let src = r * self.shape.cols;
            out.data[dst..dst + self.shape.cols]
                .copy_from_slice(&self.data[src..src + self.shape.cols]);
        }
        Ok(out)
    }

    /// Rotation by 180 degrees.
    pub fn flipped(&self) -> Image {
        let mut data = self.data.clone();
        data.reverse();
        Self::from_vec(self.shape, data)
    }
}

impl AsRef<Image> for Image {
    fn as_ref(&self) -> &Image {
        self
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Tolerance on `sum(a) == 1` for a proper point spread function.
pub const PSF_SUM_TOLERANCE: f64 = 1e-12;

/// A filter. Whether it is a proper point spread function (non-negative,
/// summing to one) is a property checked on demand, not an invariant of
/// the type, since the same container also holds Kronecker deltas and
/// intermediate linear combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf(Image);

impl Psf {
    pub fn new(image: Image) -> Self {
        Psf(image)
    }

    pub fn from_vec(shape: Shape2, data: Vec<f64>) -> Result<Self> {
        Image::new(shape, data).map(Psf)
    }

    pub fn delta(shape: Shape2, r: usize, c: usize) -> Result<Self> {
        Image::delta(shape, r, c).map(Psf)
    }

    /// Uniform box filter.
    pub fn uniform(shape: Shape2) -> Self {
        Psf(Image::filled(shape, 1.0 / shape.len() as f64))
    }

    pub fn is_proper(&self) -> bool {
        self.0.data().iter().all(|&v| v >= 0.0) && (self.0.sum() - 1.0).abs() <= PSF_SUM_TOLERANCE
    }

    pub fn into_image(self) -> Image {
        self.0
    }
}

impl Deref for Psf {
    type Target = Image;
    fn deref(&self) -> &Image {
        &self.0
    }
}

impl DerefMut for Psf {
    fn deref_mut(&mut self) -> &mut Image {
        &mut self.0
    }
}

impl AsRef<Image> for Psf {
    fn as_ref(&self) -> &Image {
        &self.0
    }
}
