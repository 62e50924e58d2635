//! Evaluation metrics: norm-invariant RMS over observed pixels and
//! principal angles between subspaces.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{MfbdError, Result};
use crate::footprint::Footprint;
use crate::image::{Image, Shape2};
use crate::linalg::orthonormalize;

/// Pixels that take part in an evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask {
    shape: Shape2,
    observed: Vec<bool>,
}

impl EvalMask {
    pub fn new(shape: Shape2, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != shape.len() {
            return Err(MfbdError::Dimension(format!(
                "{} mask entries for a {shape} image",
                observed.len()
            )));
        }
        Ok(Self { shape, observed })
    }

    pub fn all(shape: Shape2) -> Self {
        Self {
            shape,
            observed: vec![true; shape.len()],
        }
    }

    /// Pixels seen through at least one window the footprint keeps, i.e.
    /// the complement of the support of `q(h)`.
    pub fn from_footprint(h: &Footprint, x_shape: Shape2) -> Result<Self> {
        Self::new(x_shape, h.observed_mask(x_shape)?)
    }

    pub fn shape(&self) -> Shape2 {
        self.shape
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }
}

/// `‖x_true - (‖x_true‖/‖x‖)·x‖ / √|x|` over the masked pixels, with the
/// sign of the rescaling chosen to minimize the error.
pub fn ni_rms(x: &Image, x_true: &Image, mask: Option<&EvalMask>) -> Result<f64> {
    if x.shape() != x_true.shape() {
        return Err(MfbdError::Dimension(format!(
            "estimate is {}, ground truth is {}",
            x.shape(),
            x_true.shape()
        )));
    }
    if let Some(m) = mask {
        if m.shape() != x.shape() {
            return Err(MfbdError::Dimension(format!(
                "mask is {}, images are {}",
                m.shape(),
                x.shape()
            )));
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m.observed[i]);
    let (mut xx, mut tt, mut xt, mut count) = (0.0, 0.0, 0.0, 0usize);
    for (i, (&a, &b)) in x.data().iter().zip(x_true.data()).enumerate() {
        if keep(i) {
            xx += a * a;
            tt += b * b;
            xt += a * b;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MfbdError::Config("evaluation mask selects no pixel".into()));
    }
    if xx == 0.0 {
        return Err(MfbdError::Numeric("NI-RMS undefined for a zero estimate".into()));
    }
    let scale = (tt / xx).sqrt() * if xt < 0.0 { -1.0 } else { 1.0 };
    let mut err = 0.0;
    for (i, (&a, &b)) in x.data().iter().zip(x_true.data()).enumerate() {
        if keep(i) {
            err += (b - scale * a).powi(2);
        }
    }
    Ok((err / count as f64).sqrt())
}

/// Principal angles (radians, ascending) between the column spaces of
/// `u1` and `u2`; as many angles as the smaller dimension.
pub fn subspace_angles(u1: &DMatrix<f64>, u2: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u1.nrows() != u2.nrows() {
        return Err(MfbdError::Dimension(format!(
            "ambient dimensions {} and {} differ",
            u1.nrows(),
            u2.nrows()
        )));
    }
    let (a, b) = if u1.ncols() >= u2.ncols() { (u1, u2) } else { (u2, u1) };
    for m in [a, b] {
        if m.ncols() == 0 || crate::linalg::numerical_rank(m, 1e-12) < m.ncols() {
            return Err(MfbdError::RankDeficient(
                "subspace basis is rank deficient".into(),
            ));
        }
    }
    let qa = orthonormalize(a.clone());
    let qb = orthonormalize(b.clone());
    let cross = qa.transpose() * &qb;
    let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    // Sines come from the part of qb outside span(qa); accurate for small
    // angles where the cosines are not.
    let resid = &qb - &qa * &cross;
    let mut sin: Vec<f64> = resid.singular_values().iter().copied().collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| s.min(1.0).atan2(c.min(1.0)))
        .collect())
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub label: String,
    pub ni_rms: f64,
    pub observed_pixels: usize,
}

/// CSV with header `label,ni_rms,observed_pixels`. Floats use the
/// shortest round-trip representation.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("label,ni_rms,observed_pixels\n");
    for r in rows {
        let _ = writeln!(s, "{},{:?},{}", r.label, r.ni_rms, r.observed_pixels);
    }
    s
}
