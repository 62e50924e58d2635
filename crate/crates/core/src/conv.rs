//! FFT-backed convolution in circular, valid and full boundary modes, and
//! the matrix-free operators built on top of it.
//!
//! Convolution follows `(g * h)[t] = sum_k g[t - k] h[k]`. For valid
//! convolution of an image `x` with a filter `a` the output has shape
//! `|x| - |a| + 1` and output pixel `j` equals circular output pixel
//! `j + |a| - 1`.
//!
//! Window orientation: the operator `B_k` (and `D_t`) crops the window of
//! `x` whose top-left corner is at offset `k`. Written as a valid
//! convolution, `B_k x = b ∗_valid x` where the Kronecker delta `b` sits at
//! the *mirrored* position `|a| - 1 - k` (see [`window_delta`]). Footprints
//! and PSFs are indexed in filter coordinates; [`filter_to_window`] maps
//! between the two.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{MfbdError, Result};
use crate::image::{Image, Psf, Shape2};

type C64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward/inverse plans for one 2-D transform size.
#[derive(Clone)]
pub struct Fft2Plan {
    shape: Shape2,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2Plan {
    pub fn new(shape: Shape2) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Self {
                shape,
                row_fwd: p.plan_fft_forward(shape.cols),
                row_inv: p.plan_fft_inverse(shape.cols),
                col_fwd: p.plan_fft_forward(shape.rows),
                col_inv: p.plan_fft_inverse(shape.rows),
            }
        })
    }

    pub fn shape(&self) -> Shape2 {
        self.shape
    }

    fn transform(&self, buf: &mut [C64], inverse: bool) {
        let Shape2 { rows, cols } = self.shape;
        debug_assert_eq!(buf.len(), rows * cols);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        if cols > 1 {
            row.process(buf);
        }
        if rows > 1 {
            let mut column = vec![C64::new(0.0, 0.0); rows];
            for c in 0..cols {
                for r in 0..rows {
                    column[r] = buf[r * cols + c];
                }
                col.process(&mut column);
                for r in 0..rows {
                    buf[r * cols + c] = column[r];
                }
            }
        }
    }

    /// Spectrum of `img` zero-padded at `(r0, c0)` onto the plan's canvas.
    pub fn forward_padded(&self, img: &Image, r0: usize, c0: usize) -> Vec<C64> {
        let canvas = self.shape;
        let s = img.shape();
        debug_assert!(r0 + s.rows <= canvas.rows && c0 + s.cols <= canvas.cols);
        let mut buf = vec![C64::new(0.0, 0.0); canvas.len()];
        for r in 0..s.rows {
            for c in 0..s.cols {
                buf[(r0 + r) * canvas.cols + c0 + c] = C64::new(img.get(r, c), 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform keeping the real part of the `out`-shaped window at
    /// `(r0, c0)`.
    pub fn inverse_window(&self, mut spec: Vec<C64>, r0: usize, c0: usize, out: Shape2) -> Image {
        self.transform(&mut spec, true);
        let scale = 1.0 / self.shape.len() as f64;
        let cols = self.shape.cols;
        Image::from_fn(out, |r, c| spec[(r0 + r) * cols + c0 + c].re * scale)
    }
}

fn check_filter(x: Shape2, a: Shape2) -> Result<Shape2> {
    x.valid(a)
}

/// Circular convolution over one period of the `|x|`-periodic image.
pub fn conv_circular(x: &Image, a: &Image) -> Result<Image> {
    check_filter(x.shape(), a.shape())?;
    let plan = Fft2Plan::new(x.shape());
    let mut fx = plan.forward_padded(x, 0, 0);
    let fa = plan.forward_padded(a, 0, 0);
    fx.iter_mut().zip(&fa).for_each(|(u, v)| *u *= v);
    Ok(plan.inverse_window(fx, 0, 0, x.shape()))
}

/// Valid convolution of image `x` with filter `a`.
pub fn conv_valid(x: &Image, a: &Image) -> Result<Image> {
    let y = check_filter(x.shape(), a.shape())?;
    let plan = Fft2Plan::new(x.shape());
    let mut fx = plan.forward_padded(x, 0, 0);
    let fa = plan.forward_padded(a, 0, 0);
    fx.iter_mut().zip(&fa).for_each(|(u, v)| *u *= v);
    let s = a.shape();
    Ok(plan.inverse_window(fx, s.rows - 1, s.cols - 1, y))
}

/// Adjoint of `x ↦ conv_valid(x, a)`: maps a `|y|`-sized image back onto
/// the `x_shape` canvas.
pub fn conv_valid_adjoint(r: &Image, a: &Image, x_shape: Shape2) -> Result<Image> {
    let y = check_filter(x_shape, a.shape())?;
    if r.shape() != y {
        return Err(MfbdError::Dimension(format!(
            "adjoint input is {}, expected {y}",
            r.shape()
        )));
    }
    let plan = Fft2Plan::new(x_shape);
    let s = a.shape();
    let mut fr = plan.forward_padded(r, s.rows - 1, s.cols - 1);
    let fa = plan.forward_padded(a, 0, 0);
    fr.iter_mut().zip(&fa).for_each(|(u, v)| *u *= v.conj());
    Ok(plan.inverse_window(fr, 0, 0, x_shape))
}

/// Full (zero-padded) convolution; output shape `|b| + |a| - 1`.
pub fn conv_full(b: &Image, a: &Image) -> Image {
    let out = b.shape().full(a.shape());
    let plan = Fft2Plan::new(out);
    let mut fb = plan.forward_padded(b, 0, 0);
    let fa = plan.forward_padded(a, 0, 0);
    fb.iter_mut().zip(&fa).for_each(|(u, v)| *u *= v);
    plan.inverse_window(fb, 0, 0, out)
}

/// A linear map between flattened images, applied without materializing
/// its matrix.
pub trait LinearOperator {
    fn input_shape(&self) -> Shape2;
    fn output_shape(&self) -> Shape2;
    fn apply(&self, v: &Image) -> Result<Image>;
    fn apply_adjoint(&self, w: &Image) -> Result<Image>;
}

/// Dense matrix of an operator, one `apply` per column. For small sizes
/// and verification only.
pub fn materialize(op: &dyn LinearOperator) -> Result<DMatrix<f64>> {
    let ins = op.input_shape();
    let outs = op.output_shape();
    let mut m = DMatrix::zeros(outs.len(), ins.len());
    for j in 0..ins.len() {
        let (r, c) = ins.coords(j);
        let col = op.apply(&Image::delta(ins, r, c)?)?;
        m.column_mut(j).copy_from_slice(col.data());
    }
    Ok(m)
}

/// `X(x)`: maps a filter `a` to `conv_valid(x, a)`.
pub struct ConvolutionBy {
    x_shape: Shape2,
    psf_shape: Shape2,
    y_shape: Shape2,
    plan: Fft2Plan,
    x_spectrum: Vec<C64>,
}

impl ConvolutionBy {
    pub fn new(x: &Image, psf_shape: Shape2) -> Result<Self> {
        let y_shape = x.shape().valid(psf_shape)?;
        let plan = Fft2Plan::new(x.shape());
        let x_spectrum = plan.forward_padded(x, 0, 0);
        Ok(Self {
            x_shape: x.shape(),
            psf_shape,
            y_shape,
            plan,
            x_spectrum,
        })
    }

    pub fn x_shape(&self) -> Shape2 {
        self.x_shape
    }
}

/// Builds the matrix-free `X(x)` for filters of `psf_shape`.
pub fn op_x(x: &Image, psf_shape: Shape2) -> Result<ConvolutionBy> {
    ConvolutionBy::new(x, psf_shape)
}

impl LinearOperator for ConvolutionBy {
    fn input_shape(&self) -> Shape2 {
        self.psf_shape
    }

    fn output_shape(&self) -> Shape2 {
        self.y_shape
    }

    fn apply(&self, a: &Image) -> Result<Image> {
        if a.shape() != self.psf_shape {
            return Err(MfbdError::Dimension(format!(
                "filter is {}, operator expects {}",
                a.shape(),
                self.psf_shape
            )));
        }
        let mut fa = self.plan.forward_padded(a, 0, 0);
        fa.iter_mut()
            .zip(&self.x_spectrum)
            .for_each(|(u, v)| *u *= v);
        Ok(self.plan.inverse_window(
            fa,
            self.psf_shape.rows - 1,
            self.psf_shape.cols - 1,
            self.y_shape,
        ))
    }

    fn apply_adjoint(&self, y: &Image) -> Result<Image> {
        if y.shape() != self.y_shape {
            return Err(MfbdError::Dimension(format!(
                "image is {}, operator expects {}",
                y.shape(),
                self.y_shape
            )));
        }
        let mut fy =
            self.plan
                .forward_padded(y, self.psf_shape.rows - 1, self.psf_shape.cols - 1);
        fy.iter_mut()
            .zip(&self.x_spectrum)
            .for_each(|(u, v)| *u *= v.conj());
        Ok(self.plan.inverse_window(fy, 0, 0, self.psf_shape))
    }
}

/// Crop of the window at a fixed offset (`B_k`, `D_t`). The adjoint pads
/// back with zeros.
#[derive(Debug, Clone, Copy)]
pub struct WindowOp {
    input: Shape2,
    output: Shape2,
    offset: (usize, usize),
}

impl WindowOp {
    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }
}

impl LinearOperator for WindowOp {
    fn input_shape(&self) -> Shape2 {
        self.input
    }

    fn output_shape(&self) -> Shape2 {
        self.output
    }

    fn apply(&self, x: &Image) -> Result<Image> {
        if x.shape() != self.input {
            return Err(MfbdError::Dimension(format!(
                "image is {}, operator expects {}",
                x.shape(),
                self.input
            )));
        }
        x.crop(self.offset.0, self.offset.1, self.output)
    }

    fn apply_adjoint(&self, y: &Image) -> Result<Image> {
        if y.shape() != self.output {
            return Err(MfbdError::Dimension(format!(
                "image is {}, operator expects {}",
                y.shape(),
                self.output
            )));
        }
        y.padded(self.input, self.offset.0, self.offset.1)
    }
}

fn window_op(k: (usize, usize), input: Shape2, filter: Shape2) -> Result<WindowOp> {
    let output = input.valid(filter)?;
    if k.0 >= filter.rows || k.1 >= filter.cols {
        return Err(MfbdError::IndexOutOfRange(format!(
            "shift ({}, {}) outside filter shape {filter}",
            k.0, k.1
        )));
    }
    Ok(WindowOp {
        input,
        output,
        offset: k,
    })
}

/// `B_k`: the `|y|`-sized window of an `x_shape` image at offset `k`.
pub fn op_bk(k: (usize, usize), x_shape: Shape2, psf_shape: Shape2) -> Result<WindowOp> {
    window_op(k, x_shape, psf_shape)
}

/// `D_t`: the inflating shift of a `y_shape` observation at offset `t`.
pub fn op_dt(t: (usize, usize), y_shape: Shape2, d_shape: Shape2) -> Result<WindowOp> {
    window_op(t, y_shape, d_shape)
}

/// Maps a filter coordinate to the offset of the window it selects (and
/// back; the map is an involution).
pub fn filter_to_window(k: (usize, usize), filter: Shape2) -> (usize, usize) {
    (filter.rows - 1 - k.0, filter.cols - 1 - k.1)
}

/// Kronecker delta `b` with `conv_valid(x, b)` equal to the window of `x`
/// at offset `k`.
pub fn window_delta(filter: Shape2, k: (usize, usize)) -> Result<Psf> {
    if k.0 >= filter.rows || k.1 >= filter.cols {
        return Err(MfbdError::IndexOutOfRange(format!(
            "shift ({}, {}) outside filter shape {filter}",
            k.0, k.1
        )));
    }
    let (r, c) = filter_to_window(k, filter);
    Psf::delta(filter, r, c)
}
