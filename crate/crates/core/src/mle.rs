//! Direct likelihood maximization over the image:
//! `φ(x) = Σ_i λ_i u_iᵀ X (XᵀX)⁻¹ Xᵀ u_i` with `X = X(x)`, its analytic
//! gradient, and fixed-step gradient ascent.
//!
//! `φ` is invariant to scaling `x`, and from a random start the ascent
//! typically stalls at a non-global stationary point.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::conv::{filter_to_window, Fft2Plan};
use crate::error::{MfbdError, Result};
use crate::image::{Image, Shape2};
use crate::metrics::{ni_rms, EvalMask};
use crate::subspace::SignalSubspace;

/// Relative pivot size below which `XᵀX` counts as singular.
const GRAM_RTOL: f64 = 1e-13;

/// `X(x)` as the dense `|y| x |a|` matrix of windows together with the
/// Cholesky factor of its Gram matrix.
struct Projector {
    windows: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl Projector {
    fn new(x: &Image, psf_shape: Shape2) -> Result<Self> {
        let y = x.shape().valid(psf_shape)?;
        let xs = x.shape();
        let mut windows = DMatrix::zeros(y.len(), psf_shape.len());
        for k in 0..psf_shape.len() {
            // column k of X(x) is x convolved with the delta at filter index k
            let (r0, c0) = filter_to_window(psf_shape.coords(k), psf_shape);
            let mut col = windows.column_mut(k);
            for r in 0..y.rows {
                let src = &x.data()[(r0 + r) * xs.cols + c0..][..y.cols];
                col.rows_mut(r * y.cols, y.cols).copy_from_slice(src);
            }
        }
        let g = windows.tr_mul(&windows);
        let top = g.diagonal().max();
        let rank_err = || {
            MfbdError::RankDeficient("XᵀX is singular: image not persistently exciting".into())
        };
        if top <= 0.0 {
            return Err(rank_err());
        }
        let gram = Cholesky::new(g).ok_or_else(rank_err)?;
        let l = gram.l_dirty();
        if (0..l.nrows()).any(|i| l[(i, i)] * l[(i, i)] < GRAM_RTOL * top) {
            return Err(rank_err());
        }
        Ok(Self { windows, gram })
    }

    /// `v = (XᵀX)⁻¹ Xᵀ u`.
    fn coefficients(&self, u: &[f64]) -> DVector<f64> {
        let c = self.windows.tr_mul(&DVector::from_column_slice(u));
        self.gram.solve(&c)
    }
}

fn check_shapes(x: &Image, s: &SignalSubspace, psf_shape: Shape2) -> Result<()> {
    let y = x.shape().valid(psf_shape)?;
    if y != s.y_shape() {
        return Err(MfbdError::Dimension(format!(
            "image {} and filter {psf_shape} give {y} frames, subspace has {}",
            x.shape(),
            s.y_shape()
        )));
    }
    Ok(())
}

/// `φ(x)` over the first `m` eigenpairs.
pub fn phi(x: &Image, s: &SignalSubspace, psf_shape: Shape2) -> Result<f64> {
    check_shapes(x, s, psf_shape)?;
    let p = Projector::new(x, psf_shape)?;
    let mut total = 0.0;
    for i in 0..s.m() {
        let u = s.u().column(i);
        let v = p.coefficients(u.as_slice());
        // uᵀ P_X u = (Xᵀu)ᵀ v
        let c = p.windows.tr_mul(&u);
        total += s.lambda()[i] * c.dot(&v);
    }
    Ok(total)
}

/// `φ(x)` and `∇φ(x) = Σ λ_i · 2 A(v_i)ᵀ (u_i - X v_i)`, the adjoint
/// applied in the Fourier domain.
pub fn phi_and_grad(x: &Image, s: &SignalSubspace, psf_shape: Shape2) -> Result<(f64, Image)> {
    check_shapes(x, s, psf_shape)?;
    let p = Projector::new(x, psf_shape)?;
    let plan = Fft2Plan::new(x.shape());
    let y = s.y_shape();
    let (r0, c0) = (psf_shape.rows - 1, psf_shape.cols - 1);
    let mut acc = vec![rustfft::num_complex::Complex::new(0.0, 0.0); x.shape().len()];
    let mut total = 0.0;
    for i in 0..s.m() {
        let lam = s.lambda()[i];
        let u = s.u().column(i);
        let v = p.coefficients(u.as_slice());
        let xv = &p.windows * &v;
        total += lam * u.dot(&xv);
        let r = Image::new(y, (&u - &xv).iter().copied().collect())?;
        let v_img = Image::new(psf_shape, v.iter().copied().collect())?;
        let fr = plan.forward_padded(&r, r0, c0);
        let fv = plan.forward_padded(&v_img, 0, 0);
        for ((a, r), v) in acc.iter_mut().zip(&fr).zip(&fv) {
            *a += r * v.conj() * (2.0 * lam);
        }
    }
    Ok((total, plan.inverse_window(acc, 0, 0, x.shape())))
}

pub fn grad_phi(x: &Image, s: &SignalSubspace, psf_shape: Shape2) -> Result<Image> {
    Ok(phi_and_grad(x, s, psf_shape)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentConfig {
    pub tau: f64,
    pub max_iter: usize,
    /// Stop once `‖∇φ‖` falls below this; `None` means `1e-8·λ_1`.
    pub grad_tol: Option<f64>,
    /// Consecutive decreases of `φ` tolerated before reporting divergence.
    pub divergence_patience: usize,
    /// Halve the step until `φ` does not decrease.
    pub backtracking: bool,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            max_iter: 100_000,
            grad_tol: None,
            divergence_patience: 20,
            backtracking: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentRecord {
    pub iteration: usize,
    pub phi: f64,
    pub grad_norm: f64,
    pub ni_rms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MleState {
    pub x: Image,
    pub t: usize,
    /// One record per visited iterate, `t + 1` in total.
    pub history: Vec<AscentRecord>,
    pub converged: bool,
    pub diverged: bool,
}

impl MleState {
    /// CSV with header `iteration,phi,grad_norm,ni_rms`.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,phi,grad_norm,ni_rms\n");
        for r in &self.history {
            let rms = r.ni_rms.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:?},{:?},{}", r.iteration, r.phi, r.grad_norm, rms);
        }
        s
    }
}

/// Ground truth used to annotate the history with NI-RMS.
#[derive(Debug, Clone, Copy)]
pub struct Reference<'a> {
    pub truth: &'a Image,
    pub mask: Option<&'a EvalMask>,
}

/// Fixed-step ascent `x_{t+1} = x_t + τ ∇φ(x_t)`.
pub fn gradient_ascent(
    x0: &Image,
    s: &SignalSubspace,
    psf_shape: Shape2,
    cfg: &AscentConfig,
    reference: Option<Reference<'_>>,
) -> Result<MleState> {
    gradient_ascent_with(x0, s, psf_shape, cfg, reference, |_| true)
}

/// As [`gradient_ascent`], calling `callback` after every recorded
/// iterate; returning `false` stops the ascent.
pub fn gradient_ascent_with(
    x0: &Image,
    s: &SignalSubspace,
    psf_shape: Shape2,
    cfg: &AscentConfig,
    reference: Option<Reference<'_>>,
    mut callback: impl FnMut(&AscentRecord) -> bool,
) -> Result<MleState> {
    if !(cfg.tau >= 0.0 && cfg.tau.is_finite()) {
        return Err(MfbdError::Config(format!("step size {} must be >= 0", cfg.tau)));
    }
    let tol = cfg.grad_tol.unwrap_or(1e-8 * s.lambda()[0]);
    let rms = |x: &Image| -> Result<Option<f64>> {
        reference
            .map(|r| ni_rms(x, r.truth, r.mask))
            .transpose()
    };
    let mut x = x0.clone();
    let (mut f, mut g) = phi_and_grad(&x, s, psf_shape)?;
    let mut history = vec![AscentRecord {
        iteration: 0,
        phi: f,
        grad_norm: g.norm(),
        ni_rms: rms(&x)?,
    }];
    let (mut converged, mut diverged) = (history[0].grad_norm < tol, false);
    let mut decreases = 0;
    let mut t = 0;
    if !callback(&history[0]) {
        converged = false;
    }
    while !converged && t < cfg.max_iter && history.len() == t + 1 {
        let mut step = cfg.tau;
        let (mut next, mut fn_, mut gn);
        loop {
            next = x.clone();
            crate::image::axpy(step, g.data(), next.data_mut());
            (fn_, gn) = phi_and_grad(&next, s, psf_shape)?;
            if !cfg.backtracking || fn_ >= f || step < cfg.tau * 1e-9 {
                break;
            }
            step *= 0.5;
        }
        decreases = if fn_ < f { decreases + 1 } else { 0 };
        x = next;
        f = fn_;
        g = gn;
        t += 1;
        let rec = AscentRecord {
            iteration: t,
            phi: f,
            grad_norm: g.norm(),
            ni_rms: rms(&x)?,
        };
        history.push(rec);
        if rec.grad_norm < tol {
            converged = true;
        }
        if decreases > cfg.divergence_patience {
            log::warn!("gradient ascent: φ decreased {decreases} times in a row at t = {t}");
            diverged = true;
            break;
        }
        if !callback(&rec) {
            break;
        }
    }
    Ok(MleState {
        x,
        t,
        history,
        converged,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{materialize, op_x};
    use crate::testimages::uniform_noise;

    fn random_subspace(y: Shape2, m: usize, seed: u64) -> SignalSubspace {
        let noise = uniform_noise(Shape2::of(y.len(), m), seed);
        let q = crate::linalg::orthonormalize(DMatrix::from_row_slice(y.len(), m, noise.data()));
        let lambda = (0..m).map(|i| 10.0 / (i + 1) as f64).collect();
        SignalSubspace::new(y, q, lambda, m, 100).unwrap()
    }

    #[test]
    fn phi_matches_dense_projector() {
        let x = uniform_noise(Shape2::of(12, 12), 3);
        let a = Shape2::of(3, 3);
        let s = random_subspace(Shape2::of(10, 10), 4, 8);
        let xm = materialize(&op_x(&x, a).unwrap()).unwrap();
        let proj = &xm * (xm.transpose() * &xm).try_inverse().unwrap() * xm.transpose();
        let expect: f64 = (0..4)
            .map(|i| {
                let u = s.u().column(i);
                s.lambda()[i] * (u.transpose() * &proj * u)[(0, 0)]
            })
            .sum();
        let got = phi(&x, &s, a).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect, "{got} vs {expect}");
        assert!((phi(&x.scaled(-3.5), &s, a).unwrap() - got).abs() < 1e-10 * got);
    }

    #[test]
    fn constant_image_is_rank_deficient() {
        let x = Image::filled(Shape2::of(8, 8), 2.0);
        let s = random_subspace(Shape2::of(6, 6), 2, 1);
        assert!(matches!(
            phi(&x, &s, Shape2::of(3, 3)),
            Err(MfbdError::RankDeficient(_))
        ));
    }

    #[test]
    fn gradient_is_orthogonal_to_x() {
        let x = uniform_noise(Shape2::of(9, 9), 5);
        let s = random_subspace(Shape2::of(7, 7), 3, 2);
        let g = grad_phi(&x, &s, Shape2::of(3, 3)).unwrap();
        assert!(g.dot(&x).abs() < 1e-10 * g.norm() * x.norm());
    }

    #[test]
    fn zero_step_keeps_x() {
        let x = uniform_noise(Shape2::of(9, 9), 5);
        let s = random_subspace(Shape2::of(7, 7), 3, 2);
        let cfg = AscentConfig {
            tau: 0.0,
            max_iter: 3,
            ..Default::default()
        };
        let st = gradient_ascent(&x, &s, Shape2::of(3, 3), &cfg, None).unwrap();
        assert_eq!(st.x, x);
        assert_eq!(st.history.len(), st.t + 1);
        assert!(st.history_csv().starts_with("iteration,phi,grad_norm,ni_rms\n0,"));
    }
}
