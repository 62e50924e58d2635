//! PSF footprints: binary masks over filter entries marking where any
//! frame's PSF may be nonzero.

use std::fmt::Write as _;

use crate::conv::{conv_full, filter_to_window};
use crate::error::{MfbdError, Result};
use crate::image::{Image, Psf, Shape2};

/// Binary mask `h` in filter coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    shape: Shape2,
    mask: Vec<bool>,
}

impl Footprint {
    pub fn new(shape: Shape2, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != shape.len() {
            return Err(MfbdError::Dimension(format!(
                "{} mask entries for a {shape} footprint",
                mask.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(MfbdError::Config("footprint has no active entry".into()));
        }
        Ok(Self { shape, mask })
    }

    pub fn all_ones(shape: Shape2) -> Self {
        Self {
            shape,
            mask: vec![true; shape.len()],
        }
    }

    /// Entries that are nonzero in at least one of the given filters.
    pub fn from_psfs<'a>(psfs: impl IntoIterator<Item = &'a Psf>) -> Result<Self> {
        let mut iter = psfs.into_iter().peekable();
        let shape = iter
            .peek()
            .map(|p| p.shape())
            .ok_or_else(|| MfbdError::Config("no filters given".into()))?;
        let mut mask = vec![false; shape.len()];
        for p in iter {
            if p.shape() != shape {
                return Err(MfbdError::Dimension("filters differ in shape".into()));
            }
            for (m, &v) in mask.iter_mut().zip(p.data()) {
                *m |= v != 0.0;
            }
        }
        Self::new(shape, mask)
    }

    /// The 10x10, 57-entry diagonal band used by the moderate-noise
    /// experiments: `|r + c - 9| <= 3` without entry `(9, 3)`. Its zeros sit
    /// in the top-left and bottom-right corners.
    pub fn diagonal_band_57() -> Self {
        let shape = Shape2::of(10, 10);
        let mask = (0..100)
            .map(|i| {
                let (r, c): (usize, usize) = (i / 10, i % 10);
                (r + c).abs_diff(9) <= 3 && (r, c) != (9, 3)
            })
            .collect();
        Self { shape, mask }
    }

    pub fn shape(&self) -> Shape2 {
        self.shape
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `<1, h>`.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_active(&self, flat: usize) -> bool {
        self.mask[flat]
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn deactivate(&mut self, flat: usize) {
        self.mask[flat] = false;
    }

    /// Window offsets (see [`crate::conv::op_bk`]) selected by the active
    /// entries, in ascending filter index order.
    pub fn window_offsets(&self) -> Vec<(usize, usize)> {
        self.active()
            .map(|i| filter_to_window(self.shape.coords(i), self.shape))
            .collect()
    }

    /// Indicator image of the active entries.
    pub fn to_image(&self) -> Image {
        Image::from_fn(self.shape, |r, c| {
            if self.mask[self.shape.index(r, c)] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// How many active windows cover each pixel of an `x_shape` image:
    /// the full convolution of the window-oriented mask with `1_{|y|}`.
    fn coverage(&self, x_shape: Shape2) -> Result<Image> {
        let y = x_shape.valid(self.shape)?;
        // The window-oriented mask is the filter mask rotated by 180°.
        let windows = self.to_image().flipped();
        Ok(conv_full(&windows, &Image::filled(y, 1.0)))
    }

    /// Penalty mask `q(h) = 1 - min{1, h ∗_full 1_{|y|}}` with `h` taken in
    /// window orientation: 1 exactly on pixels no active window observes.
    pub fn penalty_mask(&self, x_shape: Shape2) -> Result<Vec<f64>> {
        Ok(self
            .coverage(x_shape)?
            .data()
            .iter()
            .map(|&v| if v > 0.5 { 0.0 } else { 1.0 })
            .collect())
    }

    /// Pixels of an `x_shape` image observed through at least one active
    /// window.
    pub fn observed_mask(&self, x_shape: Shape2) -> Result<Vec<bool>> {
        Ok(self.coverage(x_shape)?.data().iter().map(|&v| v > 0.5).collect())
    }

    /// Footprint of the filters `d ∗_full a` for `a` supported on `self` and
    /// any `d` of shape `d_shape`.
    pub fn dilated(&self, d_shape: Shape2) -> Footprint {
        let cov = conv_full(&self.to_image(), &Image::filled(d_shape, 1.0));
        Footprint {
            shape: cov.shape(),
            mask: cov.data().iter().map(|&v| v > 0.5).collect(),
        }
    }

    /// One text row per filter row, `#` for active and `.` for inactive.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.shape.rows {
            for c in 0..self.shape.cols {
                s.push(if self.mask[self.shape.index(r, c)] { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let cols = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let shape = Shape2::new(rows.len(), cols)?;
        let mut mask = Vec::with_capacity(shape.len());
        for row in rows {
            if row.chars().count() != cols {
                return Err(MfbdError::Format("ragged footprint rows".into()));
            }
            for ch in row.chars() {
                mask.push(match ch {
                    '#' | '1' => true,
                    '.' | '0' => false,
                    other => {
                        return Err(MfbdError::Format(format!(
                            "unexpected footprint character {other:?}"
                        )))
                    }
                });
            }
        }
        Self::new(shape, mask)
    }

    /// Compact `rows x cols:hex` form used in configuration files.
    pub fn to_compact(&self) -> String {
        let mut s = format!("{}x{}:", self.shape.rows, self.shape.cols);
        for chunk in self.mask.chunks(4) {
            let mut nibble = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                if b {
                    nibble |= 1 << (3 - i);
                }
            }
            let _ = write!(s, "{nibble:x}");
        }
        s
    }

    pub fn from_compact(text: &str) -> Result<Self> {
        let bad = || MfbdError::Format(format!("malformed footprint {text:?}"));
        let (dims, hex) = text.split_once(':').ok_or_else(bad)?;
        let (r, c) = dims.split_once('x').ok_or_else(bad)?;
        let shape = Shape2::new(
            r.trim().parse().map_err(|_| bad())?,
            c.trim().parse().map_err(|_| bad())?,
        )?;
        let mut mask = Vec::with_capacity(shape.len());
        for ch in hex.trim().chars() {
            let nibble = ch.to_digit(16).ok_or_else(bad)?;
            for i in 0..4 {
                mask.push(nibble & (1 << (3 - i)) != 0);
            }
        }
        if mask.len() < shape.len() || mask[shape.len()..].iter().any(|&b| b) {
            return Err(bad());
        }
        mask.truncate(shape.len());
        Self::new(shape, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_has_57_entries_and_empty_corners() {
        let h = Footprint::diagonal_band_57();
        assert_eq!(h.count(), 57);
        assert!(!h.is_active(0));
        assert!(!h.is_active(99));
    }

    #[test]
    fn all_ones_observes_everything() {
        let h = Footprint::all_ones(Shape2::of(3, 3));
        let q = h.penalty_mask(Shape2::of(8, 8)).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_corner_leaves_pixel_unobserved() {
        // 1-D: PSF entry 0 never used. Window offset |a|-1-0 = 1 is dropped,
        // so the last pixel of x is seen by no window.
        let shape = Shape2::of(1, 2);
        let h = Footprint::new(shape, vec![false, true]).unwrap();
        let q = h.penalty_mask(Shape2::of(1, 5)).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn text_and_compact_round_trip() {
        let h = Footprint::diagonal_band_57();
        assert_eq!(Footprint::from_text(&h.to_text()).unwrap(), h);
        assert_eq!(Footprint::from_compact(&h.to_compact()).unwrap(), h);
    }

    #[test]
    fn dilation_grows_shape() {
        let h = Footprint::new(Shape2::of(2, 2), vec![true, false, false, false]).unwrap();
        let d = h.dilated(Shape2::of(2, 2));
        assert_eq!(d.shape(), Shape2::of(3, 3));
        assert_eq!(d.count(), 4);
    }
}
