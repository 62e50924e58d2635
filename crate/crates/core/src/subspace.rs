//! Signal subspace of an observation sequence: the leading eigenpairs of
//! the empirical covariance `(1/n) Y Yᵀ`, obtained from a truncated SVD of
//! `Y` without mean subtraction, and inflation of that subspace.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::op_dt;
use crate::error::{MfbdError, Result};
use crate::image::{Image, Shape2};
use crate::linalg::{orthonormalize, svd_sorted};
use crate::observations::{ObservationSet, DEFAULT_MEMORY_BUDGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SvdBackend {
    /// Full in-memory SVD; the reference.
    Dense,
    /// Randomized range finder with subspace iterations; touches `Y` only
    /// through blockwise products.
    Randomized,
    /// One streaming pass over the columns of `Y`.
    SinglePass,
}

impl SvdBackend {
    pub const ALL: [SvdBackend; 3] = [SvdBackend::Dense, SvdBackend::Randomized, SvdBackend::SinglePass];

    pub fn name(self) -> &'static str {
        match self {
            SvdBackend::Dense => "dense",
            SvdBackend::Randomized => "randomized",
            SvdBackend::SinglePass => "single-pass",
        }
    }
}

impl fmt::Display for SvdBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SvdBackend {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(SvdBackend::Dense),
            "randomized" => Ok(SvdBackend::Randomized),
            "single-pass" | "single_pass" => Ok(SvdBackend::SinglePass),
            other => Err(MfbdError::Config(format!("unknown SVD backend {other:?}"))),
        }
    }
}

/// Backend and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdBackendChoice {
    pub kind: SvdBackend,
    /// Number of singular triplets `r`.
    pub rank: usize,
    /// Oversampling `κ` of the randomized sketches.
    pub oversampling: usize,
    /// Subspace iterations `q` of the randomized backend.
    pub power_iterations: usize,
    /// Bytes per column block; `None` uses the observation set's default.
    pub block_bytes: Option<usize>,
    /// The dense backend refuses matrices larger than this.
    pub memory_budget: usize,
    pub seed: u64,
}

impl SvdBackendChoice {
    pub fn new(kind: SvdBackend, rank: usize) -> Self {
        Self {
            kind,
            rank,
            oversampling: 10,
            power_iterations: 2,
            block_bytes: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
            seed: 0,
        }
    }
}

/// `Y ≈ V diag(s) Wᵀ` restricted to the leading `r` triplets.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub v: DMatrix<f64>,
    pub s: Vec<f64>,
    /// Right singular vectors, when the backend produces them.
    pub w: Option<DMatrix<f64>>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

/// Truncated SVD of the `|y| x n` observation matrix.
pub fn svd_truncated(y: &ObservationSet, choice: &SvdBackendChoice) -> Result<TruncatedSvd> {
    let rows = y.y_shape().len();
    let n = y.len();
    if choice.rank == 0 || choice.rank > rows.min(n) {
        return Err(MfbdError::Config(format!(
            "rank {} outside 1..={} for a {rows}x{n} observation matrix",
            choice.rank,
            rows.min(n)
        )));
    }
    let block = choice.block_bytes.unwrap_or_else(|| y.default_block_bytes());
    match choice.kind {
        SvdBackend::Dense => {
            let m = y.to_matrix(choice.memory_budget)?;
            let (u, s, w) = svd_sorted(&m);
            let r = choice.rank;
            Ok(TruncatedSvd {
                v: u.columns(0, r).into_owned(),
                s: s[..r].to_vec(),
                w: Some(w.columns(0, r).into_owned()),
            })
        }
        SvdBackend::Randomized => randomized(y, choice, block),
        SvdBackend::SinglePass => single_pass(y, choice, block),
    }
}

/// `Y · rhs` with `rhs` of `n` rows, accumulated over blocks.
fn times(y: &ObservationSet, rhs: &DMatrix<f64>, block: usize) -> Result<DMatrix<f64>> {
    let rows = y.y_shape().len();
    let mut out = DMatrix::zeros(rows, rhs.ncols());
    y.for_each_block(block, |start, b| {
        let c = b.len() / rows;
        let yb = DMatrixView::from_slice(b, rows, c);
        out.gemm(1.0, &yb, &rhs.rows(start, c), 1.0);
        Ok(())
    })?;
    Ok(out)
}

/// `Yᵀ · q`, one block of rows at a time.
fn times_transposed(y: &ObservationSet, q: &DMatrix<f64>, block: usize) -> Result<DMatrix<f64>> {
    let rows = y.y_shape().len();
    let mut out = DMatrix::zeros(y.len(), q.ncols());
    y.for_each_block(block, |start, b| {
        let c = b.len() / rows;
        let yb = DMatrixView::from_slice(b, rows, c);
        out.rows_mut(start, c).gemm_tr(1.0, &yb, q, 0.0);
        Ok(())
    })?;
    Ok(out)
}

fn randomized(y: &ObservationSet, choice: &SvdBackendChoice, block: usize) -> Result<TruncatedSvd> {
    let rows = y.y_shape().len();
    let n = y.len();
    let l = (choice.rank + choice.oversampling).min(rows).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(choice.seed);
    let omega = gaussian(n, l, &mut rng);
    let mut q = orthonormalize(times(y, &omega, block)?);
    for _ in 0..choice.power_iterations {
        let w = orthonormalize(times_transposed(y, &q, block)?);
        q = orthonormalize(times(y, &w, block)?);
    }
    // B = Qᵀ Y, stored transposed (n x l).
    let bt = times_transposed(y, &q, block)?;
    let (wb, s, ub) = svd_sorted(&bt);
    let r = choice.rank;
    Ok(TruncatedSvd {
        v: &q * ub.columns(0, r),
        s: s[..r].to_vec(),
        w: Some(wb.columns(0, r).into_owned()),
    })
}

/// Single-pass sketch of the Hermitian `A = Y Yᵀ`: one streaming pass
/// forms `G = A Ω`; with `Q = orth(G)` the small matrix `B ≈ Qᵀ A Q`
/// solves `B (Qᵀ Ω) = Qᵀ G`.
fn single_pass(y: &ObservationSet, choice: &SvdBackendChoice, block: usize) -> Result<TruncatedSvd> {
    let rows = y.y_shape().len();
    let l = (choice.rank + choice.oversampling).min(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(choice.seed);
    let omega = gaussian(rows, l, &mut rng);
    let mut g = DMatrix::zeros(rows, l);
    let mut t = DMatrix::zeros(0, 0);
    y.for_each_block(block, |_, b| {
        let c = b.len() / rows;
        let yb = DMatrixView::from_slice(b, rows, c);
        if t.nrows() != c {
            t = DMatrix::zeros(c, l);
        }
        t.gemm_tr(1.0, &yb, &omega, 0.0);
        g.gemm(1.0, &yb, &t, 1.0);
        Ok(())
    })?;
    let q = orthonormalize(g.clone());
    let p = q.transpose() * &omega;
    let h = q.transpose() * &g;
    // B P = H  <=>  Pᵀ Bᵀ = Hᵀ
    let bt = p
        .transpose()
        .lu()
        .solve(&h.transpose())
        .ok_or_else(|| MfbdError::Numeric("single-pass sketch is singular".into()))?;
    let b = (&bt + bt.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let r = choice.rank;
    let vecs = DMatrix::from_fn(l, r, |i, c| eig.eigenvectors[(i, order[c])]);
    Ok(TruncatedSvd {
        v: &q * vecs,
        s: order[..r]
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
            .collect(),
        w: None,
    })
}

/// Rule for choosing the signal subspace dimension `m` from eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimensionStrategy {
    /// `m = #{i : λ_i > rel·λ_1 + abs}`.
    Threshold { rel: f64, abs: f64 },
    /// `m = argmax_{i ≥ 2} λ_i / λ_{i+1}`.
    Kink,
    Known(usize),
}

impl Default for DimensionStrategy {
    fn default() -> Self {
        DimensionStrategy::Threshold { rel: 1e-10, abs: 0.0 }
    }
}

impl fmt::Display for DimensionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DimensionStrategy::Threshold { rel, abs } => write!(f, "threshold:{rel:?}:{abs:?}"),
            DimensionStrategy::Kink => f.write_str("kink"),
            DimensionStrategy::Known(m) => write!(f, "known:{m}"),
        }
    }
}

impl FromStr for DimensionStrategy {
    type Err = MfbdError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MfbdError::Config(format!("bad dimension strategy {s:?}"));
        let mut parts = s.split(':');
        match parts.next() {
            Some("kink") => Ok(DimensionStrategy::Kink),
            Some("known") => Ok(DimensionStrategy::Known(
                parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?,
            )),
            Some("threshold") => {
                let rel = parts.next().map_or(Ok(1e-10), str::parse).map_err(|_| bad())?;
                let abs = parts.next().map_or(Ok(0.0), str::parse).map_err(|_| bad())?;
                Ok(DimensionStrategy::Threshold { rel, abs })
            }
            _ => Err(bad()),
        }
    }
}

/// Signal subspace dimension from descending eigenvalues; at least 1.
pub fn estimate_dimension(lambda: &[f64], strategy: DimensionStrategy) -> Result<usize> {
    let r = lambda.len();
    if r == 0 {
        return Err(MfbdError::Config("no eigenvalues".into()));
    }
    let m = match strategy {
        DimensionStrategy::Known(m) => {
            if m == 0 || m > r {
                return Err(MfbdError::Config(format!(
                    "known dimension {m} outside 1..={r}"
                )));
            }
            m
        }
        DimensionStrategy::Threshold { rel, abs } => {
            let cut = rel * lambda[0] + abs;
            lambda.iter().filter(|&&l| l > cut).count()
        }
        DimensionStrategy::Kink => {
            if r < 3 {
                return estimate_dimension(lambda, DimensionStrategy::default());
            }
            let mut best = (2, f64::NEG_INFINITY);
            for i in 2..r {
                // 1-based i; ratio λ_i / λ_{i+1}
                let (a, b) = (lambda[i - 1], lambda[i]);
                let ratio = if b > 0.0 { a / b } else if a > 0.0 { f64::INFINITY } else { 1.0 };
                if ratio > best.1 {
                    best = (i, ratio);
                }
            }
            best.0
        }
    };
    Ok(m.max(1))
}

/// Leading eigenvectors `U` (as columns) and eigenvalues of `(1/n) Y Yᵀ`,
/// with a selected dimension `m`.
#[derive(Debug, Clone)]
pub struct SignalSubspace {
    y_shape: Shape2,
    u: DMatrix<f64>,
    lambda: Vec<f64>,
    m: usize,
    n: usize,
}

impl SignalSubspace {
    pub fn new(y_shape: Shape2, u: DMatrix<f64>, lambda: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        if u.nrows() != y_shape.len() || u.ncols() != lambda.len() {
            return Err(MfbdError::Dimension(format!(
                "{}x{} eigenvector matrix with {} eigenvalues for {y_shape} frames",
                u.nrows(),
                u.ncols(),
                lambda.len()
            )));
        }
        if m == 0 || m > lambda.len() {
            return Err(MfbdError::Config(format!(
                "dimension {m} outside 1..={}",
                lambda.len()
            )));
        }
        if lambda.windows(2).any(|w| w[0] < w[1]) || lambda.iter().any(|&l| l < 0.0) {
            return Err(MfbdError::Numeric(
                "eigenvalues must be non-negative and descending".into(),
            ));
        }
        Ok(Self {
            y_shape,
            u,
            lambda,
            m,
            n,
        })
    }

    pub fn y_shape(&self) -> Shape2 {
        self.y_shape
    }

    /// All computed eigenvectors, one per column.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// The first `m` eigenvectors.
    pub fn basis(&self) -> DMatrix<f64> {
        self.u.columns(0, self.m).into_owned()
    }

    pub fn eigenvector_image(&self, i: usize) -> Result<Image> {
        if i >= self.rank() {
            return Err(MfbdError::IndexOutOfRange(format!(
                "eigenvector {i} of {}",
                self.rank()
            )));
        }
        Image::new(self.y_shape, self.u.column(i).iter().copied().collect())
    }

    /// Same eigenpairs with another selected dimension.
    pub fn with_dimension(&self, m: usize) -> Result<Self> {
        Self::new(self.y_shape, self.u.clone(), self.lambda.clone(), m, self.n)
    }
}

/// Eigenpairs of `(1/n) Y Yᵀ` via `λ_i = s_i² / n`, with `m` chosen by
/// `strategy`.
pub fn identify_subspace(
    y: &ObservationSet,
    choice: &SvdBackendChoice,
    strategy: DimensionStrategy,
) -> Result<SignalSubspace> {
    let svd = svd_truncated(y, choice)?;
    let n = y.len();
    let lambda: Vec<f64> = svd.s.iter().map(|s| s * s / n as f64).collect();
    let m = estimate_dimension(&lambda, strategy)?.min(n);
    SignalSubspace::new(y.y_shape(), svd.v, lambda, m, n)
}

/// Filter and frame shapes after inflating with `d_shape`:
/// `|a'| = |a| + |d| - 1`, `|y'| = |y| - |d| + 1`.
pub fn inflated_shapes(psf_shape: Shape2, y_shape: Shape2, d_shape: Shape2) -> Result<(Shape2, Shape2)> {
    if !d_shape.fits_smaller(y_shape) {
        return Err(MfbdError::Config(format!(
            "inflating filter {d_shape} must be smaller than the frames {y_shape}"
        )));
    }
    Ok((psf_shape.full(d_shape), y_shape.valid(d_shape)?))
}

/// Subspace of the inflated sequence `D_1 Y, …, D_|d| Y`, computed from
/// the much smaller `[D_1 U S … D_|d| U S]` (first `m` eigenpairs) and a
/// dense SVD. The result counts `n·|d|` observations.
pub fn inflate(
    s: &SignalSubspace,
    d_shape: Shape2,
    strategy: DimensionStrategy,
) -> Result<SignalSubspace> {
    let y = s.y_shape();
    if !d_shape.fits_smaller(y) {
        return Err(MfbdError::Config(format!(
            "inflating filter {d_shape} must be smaller than the frames {y}"
        )));
    }
    let y2 = y.valid(d_shape)?;
    let m = s.m();
    let cols = m * d_shape.len();
    let mut big = DMatrix::zeros(y2.len(), cols);
    let mut col = 0;
    for t in 0..d_shape.len() {
        let dt = op_dt(d_shape.coords(t), y, d_shape)?;
        let (r0, c0) = dt.offset();
        for i in 0..m {
            let scale = (s.n() as f64 * s.lambda()[i]).sqrt();
            let u = s.u().column(i);
            let mut dst = big.column_mut(col);
            for r in 0..y2.rows {
                for c in 0..y2.cols {
                    dst[r * y2.cols + c] = scale * u[(r0 + r) * y.cols + c0 + c];
                }
            }
            col += 1;
        }
    }
    let (u, sv, _) = svd_sorted(&big);
    let n2 = s.n() * d_shape.len();
    let lambda: Vec<f64> = sv.iter().map(|v| v * v / n2 as f64).collect();
    let m2 = estimate_dimension(&lambda, strategy)?;
    SignalSubspace::new(y2, u, lambda, m2, n2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> ObservationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(rows, rank, &mut rng);
        let b = gaussian(rank, cols, &mut rng);
        let m = a * b;
        ObservationSet::from_columns(Shape2::of(1, rows), m.as_slice().to_vec()).unwrap()
    }

    #[test]
    fn rank_one_outer_product() {
        let u: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        let v = [2.0, -1.0, 0.5];
        let mut data = vec![];
        for vj in v {
            data.extend(u.iter().map(|ui| ui * vj));
        }
        let y = ObservationSet::from_columns(Shape2::of(2, 3), data).unwrap();
        let svd = svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::Dense, 3)).unwrap();
        let un: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((svd.s[0] - un * vn).abs() < 1e-12);
        assert!(svd.s[1] < 1e-12 && svd.s[2] < 1e-12);
    }

    #[test]
    fn backends_agree_on_exact_low_rank() {
        let y = low_rank(60, 80, 8, 5);
        let dense = svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::Dense, 8)).unwrap();
        for kind in [SvdBackend::Randomized, SvdBackend::SinglePass] {
            let mut ch = SvdBackendChoice::new(kind, 8);
            ch.block_bytes = Some(60 * 8 * 7);
            let other = svd_truncated(&y, &ch).unwrap();
            for (a, b) in dense.s.iter().zip(&other.s) {
                assert!((a - b).abs() < 1e-9 * dense.s[0], "{kind}: {a} vs {b}");
            }
            let p = dense.v.transpose() * &other.v;
            let sv = p.singular_values();
            assert!(sv.iter().all(|&c| c > 1.0 - 1e-10), "{kind}");
        }
    }

    #[test]
    fn rank_bound_checked() {
        let y = low_rank(5, 4, 2, 0);
        assert!(svd_truncated(&y, &SvdBackendChoice::new(SvdBackend::Dense, 5)).is_err());
    }

    #[test]
    fn dimension_rules() {
        let l = [5.0, 3.0, 1e-14, 1e-15];
        assert_eq!(estimate_dimension(&l, DimensionStrategy::default()).unwrap(), 2);
        assert_eq!(estimate_dimension(&[2.0; 6], DimensionStrategy::default()).unwrap(), 6);
        assert_eq!(
            estimate_dimension(&[9.0, 4.0, 3.9, 0.1, 0.09], DimensionStrategy::Kink).unwrap(),
            3
        );
        assert_eq!(estimate_dimension(&l, DimensionStrategy::Known(3)).unwrap(), 3);
        assert!(estimate_dimension(&l, DimensionStrategy::Known(5)).is_err());
    }

    #[test]
    fn strategy_text_round_trip() {
        for s in [
            DimensionStrategy::default(),
            DimensionStrategy::Kink,
            DimensionStrategy::Known(57),
            DimensionStrategy::Threshold { rel: 0.125, abs: 3.5 },
        ] {
            assert_eq!(s.to_string().parse::<DimensionStrategy>().unwrap(), s);
        }
    }

    #[test]
    fn unit_inflation_keeps_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<Image> = (0..12)
            .map(|_| Image::from_fn(Shape2::of(5, 6), |_, _| rng.random::<f64>()))
            .collect();
        let y = ObservationSet::from_images(&frames).unwrap();
        let s = identify_subspace(
            &y,
            &SvdBackendChoice::new(SvdBackend::Dense, 4),
            DimensionStrategy::Known(4),
        )
        .unwrap();
        let t = inflate(&s, Shape2::of(1, 1), DimensionStrategy::Known(4)).unwrap();
        assert_eq!(t.y_shape(), s.y_shape());
        for (a, b) in s.lambda().iter().zip(t.lambda()) {
            assert!((a - b).abs() < 1e-10 * s.lambda()[0]);
        }
        let c = s.basis().transpose() * t.basis();
        assert!(c.singular_values().iter().all(|&v| v > 1.0 - 1e-12));
    }
}
