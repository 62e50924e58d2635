//! Synthetic observation sequences `y_i = a_i ∗_valid x_true + ε_i`.
//!
//! PSFs are drawn from a low-dimensional PSF subspace. The subspace built
//! by [`sample_psf_subspace`] always has the normalized box over the
//! footprint as its first basis vector, and [`sample_psf`] by default
//! stays inside the subspace: it moves from that box along a random
//! direction of the remaining basis vectors, at most as far as
//! non-negativity allows, then rescales to unit sum. Both steps are linear
//! in the basis, so every sampled PSF is an exact member of the
//! `m0`-dimensional subspace. The alternative [`PsfProjection::Clip`]
//! recipe (random coefficients, negatives clipped to zero) is available but
//! leaves the subspace.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::conv::{op_x, LinearOperator};
use crate::error::{MfbdError, Result};
use crate::footprint::Footprint;
use crate::image::{Image, Psf, Shape2};
use crate::linalg::numerical_rank;
use crate::observations::{ObservationSet, ObservationWriter, DEFAULT_MEMORY_BUDGET};

/// Orthonormal basis of the subspace PSFs are drawn from.
#[derive(Debug, Clone)]
pub struct PsfSubspace {
    psf_shape: Shape2,
    basis: Vec<Psf>,
    footprint: Option<Footprint>,
}

impl PsfSubspace {
    /// Wraps a caller-supplied basis, orthonormalizing it in order.
    pub fn from_basis(basis: Vec<Psf>, footprint: Option<Footprint>) -> Result<Self> {
        let psf_shape = basis
            .first()
            .ok_or_else(|| MfbdError::Config("empty PSF basis".into()))?
            .shape();
        let mut ortho: Vec<Psf> = Vec::with_capacity(basis.len());
        for b in basis {
            if b.shape() != psf_shape {
                return Err(MfbdError::Dimension("basis filters differ in shape".into()));
            }
            let v = orthogonalize(b.data().to_vec(), &ortho).ok_or_else(|| {
                MfbdError::Config("PSF basis is linearly dependent".into())
            })?;
            ortho.push(Psf::from_vec(psf_shape, v)?);
        }
        if let Some(h) = &footprint {
            let leaks = ortho.iter().any(|b| {
                b.data()
                    .iter()
                    .enumerate()
                    .any(|(i, &v)| !h.is_active(i) && v.abs() > 1e-12)
            });
            if leaks {
                return Err(MfbdError::Config(
                    "basis vector nonzero outside the footprint".into(),
                ));
            }
        }
        Ok(Self {
            psf_shape,
            basis: ortho,
            footprint,
        })
    }

    pub fn psf_shape(&self) -> Shape2 {
        self.psf_shape
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Psf] {
        &self.basis
    }

    pub fn footprint(&self) -> Option<&Footprint> {
        self.footprint.as_ref()
    }
}

/// Gram-Schmidt (twice) against an orthonormal set; `None` if `v` is in
/// its span.
fn orthogonalize(mut v: Vec<f64>, against: &[Psf]) -> Option<Vec<f64>> {
    let n0 = crate::image::norm(&v);
    for _ in 0..2 {
        for b in against {
            let p = crate::image::dot(&v, b.data());
            crate::image::axpy(-p, b.data(), &mut v);
        }
    }
    let n = crate::image::norm(&v);
    if n <= 1e-10 * n0.max(f64::MIN_POSITIVE) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// Random `m0`-dimensional PSF subspace supported on `footprint` (or the
/// whole filter). The first basis vector is the normalized box over the
/// support; the rest are random and orthonormal to it.
pub fn sample_psf_subspace(
    psf_shape: Shape2,
    m0: usize,
    footprint: Option<&Footprint>,
    seed: u64,
) -> Result<PsfSubspace> {
    let support: Vec<usize> = match footprint {
        Some(h) => {
            if h.shape() != psf_shape {
                return Err(MfbdError::Dimension(format!(
                    "footprint {} does not match filter {psf_shape}",
                    h.shape()
                )));
            }
            h.active().collect()
        }
        None => (0..psf_shape.len()).collect(),
    };
    if m0 == 0 || m0 > support.len() {
        return Err(MfbdError::Config(format!(
            "subspace dimension {m0} not in 1..={}",
            support.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Psf> = Vec::with_capacity(m0);
    let mut first = vec![0.0; psf_shape.len()];
    for &i in &support {
        first[i] = 1.0 / (support.len() as f64).sqrt();
    }
    basis.push(Psf::from_vec(psf_shape, first)?);
    while basis.len() < m0 {
        let mut v = vec![0.0; psf_shape.len()];
        for &i in &support {
            v[i] = StandardNormal.sample(&mut rng);
        }
        if let Some(v) = orthogonalize(v, &basis) {
            basis.push(Psf::from_vec(psf_shape, v)?);
        }
    }
    Ok(PsfSubspace {
        psf_shape,
        basis,
        footprint: footprint.cloned(),
    })
}

/// How a random combination of basis vectors is turned into a proper PSF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsfProjection {
    /// Step from the first basis vector towards a random direction in the
    /// span of the others, a uniform fraction of the way to the
    /// non-negativity boundary. Stays in the subspace.
    #[default]
    Shrink,
    /// Gaussian coefficients, negatives clipped to zero. Leaves the
    /// subspace.
    Clip,
}

impl PsfProjection {
    pub fn name(self) -> &'static str {
        match self {
            PsfProjection::Shrink => "shrink",
            PsfProjection::Clip => "clip",
        }
    }
}

impl std::str::FromStr for PsfProjection {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shrink" => Ok(PsfProjection::Shrink),
            "clip" => Ok(PsfProjection::Clip),
            other => Err(MfbdError::Config(format!("unknown PSF projection {other:?}"))),
        }
    }
}

const CLIP_RETRIES: usize = 100;

/// Draws one proper PSF (non-negative, unit sum) from the subspace.
pub fn sample_psf<R: Rng + ?Sized>(
    subspace: &PsfSubspace,
    projection: PsfProjection,
    rng: &mut R,
) -> Result<Psf> {
    let len = subspace.psf_shape.len();
    let basis = &subspace.basis;
    let mut a = match projection {
        PsfProjection::Shrink => {
            let base = basis[0].data();
            if base.iter().any(|&v| v < 0.0) || base.iter().sum::<f64>() <= 0.0 {
                return Err(MfbdError::Config(
                    "shrink sampling needs a non-negative first basis vector".into(),
                ));
            }
            let mut dir = vec![0.0; len];
            for b in &basis[1..] {
                let c: f64 = StandardNormal.sample(rng);
                crate::image::axpy(c, b.data(), &mut dir);
            }
            // Largest step keeping base + t·dir non-negative.
            let t_max = base
                .iter()
                .zip(&dir)
                .filter(|(_, &d)| d < 0.0)
                .map(|(&b, &d)| b / -d)
                .fold(f64::INFINITY, f64::min)
                .min(1.0);
            let t = t_max * (1.0 - rng.random::<f64>());
            let mut a = base.to_vec();
            crate::image::axpy(t, &dir, &mut a);
            // rounding can leave -1e-17 where the boundary was hit
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            a
        }
        PsfProjection::Clip => {
            let mut attempt = 0;
            loop {
                let mut a = vec![0.0; len];
                for b in basis {
                    let c: f64 = StandardNormal.sample(rng);
                    crate::image::axpy(c, b.data(), &mut a);
                }
                a.iter_mut().for_each(|v| *v = v.max(0.0));
                if a.iter().sum::<f64>() > 1e-12 {
                    break a;
                }
                attempt += 1;
                if attempt == CLIP_RETRIES {
                    return Err(MfbdError::Numeric(
                        "PSF draws keep vanishing after clipping".into(),
                    ));
                }
            }
        }
    };
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|v| *v /= s);
    Psf::from_vec(subspace.psf_shape, a)
}

/// Parameters of a synthetic sequence.
#[derive(Debug, Clone)]
pub struct SequenceSpec {
    pub ground_truth: Image,
    pub psf_shape: Shape2,
    pub m0: usize,
    pub n: usize,
    /// Per-pixel noise variance, in squared gray levels.
    pub noise_var: f64,
    pub seed: u64,
    pub footprint: Option<Footprint>,
    pub projection: PsfProjection,
    /// Sequences larger than this are spilled to a temporary file.
    pub memory_budget: usize,
}

impl SequenceSpec {
    pub fn new(ground_truth: Image, psf_shape: Shape2, m0: usize, n: usize, noise_var: f64) -> Self {
        Self {
            ground_truth,
            psf_shape,
            m0,
            n,
            noise_var,
            seed: 0,
            footprint: None,
            projection: PsfProjection::Shrink,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(MfbdError::Config("sequence needs n >= 1".into()));
        }
        if !self.psf_shape.fits_smaller(self.ground_truth.shape()) {
            return Err(MfbdError::Config(format!(
                "filter {} must be smaller than the image {}",
                self.psf_shape,
                self.ground_truth.shape()
            )));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(MfbdError::Config("noise variance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn y_shape(&self) -> Shape2 {
        // validated: strictly inside
        self.ground_truth.shape().valid(self.psf_shape).unwrap()
    }
}

/// Generates the sequence and returns the PSFs that produced it (for
/// verification only; the restoration never sees them).
pub fn generate_sequence(spec: &SequenceSpec) -> Result<(ObservationSet, Vec<Psf>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let subspace_seed: u64 = rng.random();
    let subspace =
        sample_psf_subspace(spec.psf_shape, spec.m0, spec.footprint.as_ref(), subspace_seed)?;
    let x = op_x(&spec.ground_truth, spec.psf_shape)?;
    let y_shape = x.output_shape();
    let noise = if spec.noise_var > 0.0 {
        Some(Normal::new(0.0, spec.noise_var.sqrt()).map_err(|e| MfbdError::Config(e.to_string()))?)
    } else {
        None
    };
    let mut writer = ObservationWriter::new(y_shape, spec.n, spec.memory_budget)?;
    let mut psfs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let a = sample_psf(&subspace, spec.projection, &mut rng)?;
        let mut y = x.apply(&a)?.into_data();
        if let Some(noise) = &noise {
            for v in y.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        writer.push(&y)?;
        psfs.push(a);
    }
    Ok((writer.finish()?, psfs))
}

/// Relative tolerance used by the rank test of [`persistently_exciting`].
pub const EXCITATION_RTOL: f64 = 1e-9;
/// Above this many entries of `X(x)` the rank is probed through a random
/// sketch instead of the dense matrix.
pub const DENSE_RANK_LIMIT: usize = 1 << 20;

/// Whether `rank X(x) = |a|`, i.e. all `|y|`-sized windows of `x` are
/// linearly independent.
pub fn persistently_exciting(x: &Image, psf_shape: Shape2) -> Result<bool> {
    if !psf_shape.fits_smaller(x.shape()) {
        return Err(MfbdError::Config(format!(
            "filter {psf_shape} must be smaller than the image {}",
            x.shape()
        )));
    }
    let op = op_x(x, psf_shape)?;
    let a_len = psf_shape.len();
    let y_len = op.output_shape().len();
    if a_len > y_len {
        return Ok(false);
    }
    let m = if y_len * a_len <= DENSE_RANK_LIMIT {
        crate::conv::materialize(&op)?
    } else {
        // Ω^T X computed as (X^T Ω)^T; same rank as X with probability one.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let y_shape = op.output_shape();
        let mut sketch = DMatrix::zeros(a_len, a_len);
        for j in 0..a_len {
            let omega = Image::from_fn(y_shape, |_, _| StandardNormal.sample(&mut rng));
            let col = op.apply_adjoint(&omega)?;
            sketch.row_mut(j).copy_from_slice(col.data());
        }
        sketch
    };
    Ok(numerical_rank(&m, EXCITATION_RTOL) == a_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testimages::uniform_noise;

    #[test]
    fn full_dimensional_subspace() {
        let s = Shape2::of(3, 3);
        let sub = sample_psf_subspace(s, 9, None, 1).unwrap();
        let m = DMatrix::from_fn(9, 9, |i, j| sub.basis()[j].data()[i]);
        assert_eq!(numerical_rank(&m, 1e-12), 9);
    }

    #[test]
    fn subspace_dimension_checked() {
        let h = Footprint::new(Shape2::of(2, 2), vec![true, true, false, false]).unwrap();
        assert!(sample_psf_subspace(Shape2::of(2, 2), 3, Some(&h), 0).is_err());
        assert!(sample_psf_subspace(Shape2::of(2, 2), 0, None, 0).is_err());
    }

    #[test]
    fn box_basis_returns_box() {
        let s = Shape2::of(3, 3);
        let sub = PsfSubspace::from_basis(vec![Psf::uniform(s)], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for proj in [PsfProjection::Shrink, PsfProjection::Clip] {
            let p = sample_psf(&sub, proj, &mut rng).unwrap();
            assert!(p.max_abs_diff(&Psf::uniform(s)) < 1e-15);
        }
    }

    #[test]
    fn delta_psf_noise_free_frame_is_crop() {
        let x = uniform_noise(Shape2::of(6, 7), 4);
        let a = Shape2::of(2, 3);
        // a one-dimensional subspace spanned by a delta at filter (1, 2)
        let d = Psf::delta(a, 1, 2).unwrap();
        let sub = PsfSubspace::from_basis(vec![d], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_psf(&sub, PsfProjection::Shrink, &mut rng).unwrap();
        let y = crate::conv::conv_valid(&x, &p).unwrap();
        // mirrored delta selects the window at offset (0, 0)
        assert!(y.max_abs_diff(&x.crop(0, 0, y.shape()).unwrap()) < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut spec = SequenceSpec::new(uniform_noise(Shape2::of(10, 10), 1), Shape2::of(3, 3), 4, 5, 2.0);
        spec.seed = 77;
        let (a, pa) = generate_sequence(&spec).unwrap();
        let (b, pb) = generate_sequence(&spec).unwrap();
        assert_eq!(pa, pb);
        for i in 0..5 {
            assert_eq!(a.observation(i).unwrap(), b.observation(i).unwrap());
        }
    }

    #[test]
    fn spec_validation() {
        let x = Image::zeros(Shape2::of(4, 4));
        assert!(SequenceSpec::new(x.clone(), Shape2::of(4, 4), 1, 1, 0.0).validate().is_err());
        assert!(SequenceSpec::new(x.clone(), Shape2::of(5, 2), 1, 1, 0.0).validate().is_err());
        assert!(SequenceSpec::new(x.clone(), Shape2::of(4, 2), 1, 1, 0.0).validate().is_ok());
        assert!(SequenceSpec::new(x.clone(), Shape2::of(2, 2), 1, 0, 0.0).validate().is_err());
        assert!(SequenceSpec::new(x, Shape2::of(2, 2), 1, 1, -1.0).validate().is_err());
    }

    #[test]
    fn excitation_examples() {
        let a = Shape2::of(3, 3);
        assert!(!persistently_exciting(&Image::filled(Shape2::of(12, 12), 7.0), a).unwrap());
        assert!(persistently_exciting(&uniform_noise(Shape2::of(12, 12), 3), a).unwrap());
        // columns duplicated: every column equals its neighbour
        let rowwise = uniform_noise(Shape2::of(12, 1), 5);
        let dup = Image::from_fn(Shape2::of(12, 12), |r, _| rowwise.get(r, 0));
        assert!(!persistently_exciting(&dup, a).unwrap());
    }

    #[test]
    fn sketched_rank_probe_agrees() {
        // 64x64 image with a 16x16 filter is above the dense limit
        let x = uniform_noise(Shape2::of(64, 64), 8);
        assert!(persistently_exciting(&x, Shape2::of(16, 16)).unwrap());
        let flat = Image::from_fn(Shape2::of(64, 64), |r, _| (r % 7) as f64);
        assert!(!persistently_exciting(&flat, Shape2::of(16, 16)).unwrap());
    }
}
