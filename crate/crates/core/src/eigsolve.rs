//! The eigenvector method.
//!
//! The estimate is the bottom eigenvector of
//! `M* = Q(h) + α Σ_k h[k] B_kᵀ (I - UUᵀ) B_k`, where `B_k` crops the
//! `|y|`-sized window selected by filter entry `k`, `U` spans the signal
//! subspace and `Q(h)` penalizes pixels no active window observes. `M*`
//! is applied matrix-free: crops, pads and batched products with `U`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MfbdError, Result};
use crate::footprint::Footprint;
use crate::image::{dot, norm, Image, Shape2};
use crate::linalg::{minres, KrylovConfig, SymmetricOperator};
use crate::observations::ObservationSet;
use crate::subspace::{identify_subspace, inflate, DimensionStrategy, SignalSubspace, SvdBackendChoice};

/// Matrix-free `M*` for one signal subspace, footprint and weight `α`.
#[derive(Debug, Clone)]
pub struct MStarOperator {
    x_shape: Shape2,
    y_shape: Shape2,
    u: Arc<DMatrix<f64>>,
    footprint: Footprint,
    offsets: Vec<(usize, usize)>,
    alpha: f64,
    penalty: Vec<f64>,
    /// `q + α Σ_k h[k] diag(B_kᵀ B_k)`.
    diagonal: Vec<f64>,
    batch: usize,
}

impl MStarOperator {
    /// `alpha = None` selects `1/|a|`.
    pub fn new(
        s: &SignalSubspace,
        footprint: Footprint,
        x_shape: Shape2,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let psf = footprint.shape();
        let y_shape = x_shape.valid(psf)?;
        if y_shape != s.y_shape() {
            return Err(MfbdError::Dimension(format!(
                "image {x_shape} and filter {psf} give {y_shape} frames, subspace has {}",
                s.y_shape()
            )));
        }
        Self::build(Arc::new(s.basis()), footprint, x_shape, y_shape, alpha)
    }

    fn build(
        u: Arc<DMatrix<f64>>,
        footprint: Footprint,
        x_shape: Shape2,
        y_shape: Shape2,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let alpha = alpha.unwrap_or(1.0 / footprint.shape().len() as f64);
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MfbdError::Config(format!("weight α = {alpha} must be positive")));
        }
        let penalty = footprint.penalty_mask(x_shape)?;
        let offsets = footprint.window_offsets();
        let mut diagonal = penalty.clone();
        for &(r0, c0) in &offsets {
            for r in 0..y_shape.rows {
                let row = &mut diagonal[(r0 + r) * x_shape.cols + c0..][..y_shape.cols];
                row.iter_mut().for_each(|d| *d += alpha);
            }
        }
        let batch = u.ncols().max(1);
        Ok(Self {
            x_shape,
            y_shape,
            u,
            footprint,
            offsets,
            alpha,
            penalty,
            diagonal,
            batch,
        })
    }

    /// Same subspace and weight with another footprint.
    pub fn with_footprint(&self, footprint: Footprint) -> Result<Self> {
        if footprint.shape() != self.footprint.shape() {
            return Err(MfbdError::Dimension("footprint shape changed".into()));
        }
        Self::build(
            Arc::clone(&self.u),
            footprint,
            self.x_shape,
            self.y_shape,
            Some(self.alpha),
        )
    }

    pub fn x_shape(&self) -> Shape2 {
        self.x_shape
    }

    pub fn footprint(&self) -> &Footprint {
        &self.footprint
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The diagonal of `Q(h)`.
    pub fn penalty(&self) -> &[f64] {
        &self.penalty
    }

    /// Windows per batched product; at most `m` keeps the extra memory
    /// of an application within `O(|x| + m|y|)`.
    pub fn set_batch(&mut self, batch: usize) {
        self.batch = batch.clamp(1, self.u.ncols().max(1));
    }

    fn crop_into(&self, x: &[f64], offset: (usize, usize), dst: &mut [f64]) {
        let (xs, ys) = (self.x_shape, self.y_shape);
        for r in 0..ys.rows {
            let src = &x[(offset.0 + r) * xs.cols + offset.1..][..ys.cols];
            dst[r * ys.cols..][..ys.cols].copy_from_slice(src);
        }
    }

    fn pad_sub(&self, src: &[f64], offset: (usize, usize), scale: f64, out: &mut [f64]) {
        let (xs, ys) = (self.x_shape, self.y_shape);
        for r in 0..ys.rows {
            let dst = &mut out[(offset.0 + r) * xs.cols + offset.1..][..ys.cols];
            for (d, s) in dst.iter_mut().zip(&src[r * ys.cols..][..ys.cols]) {
                *d -= scale * s;
            }
        }
    }

    fn check(&self, x: &[f64], out: &[f64]) -> Result<()> {
        let n = self.x_shape.len();
        if x.len() != n || out.len() != n {
            return Err(MfbdError::Dimension(format!(
                "vectors of length {} and {} for a {} image",
                x.len(),
                out.len(),
                self.x_shape
            )));
        }
        Ok(())
    }

    /// `M* x` with the `UUᵀ` products batched over windows.
    pub fn apply(&self, x: &Image) -> Result<Image> {
        let mut out = vec![0.0; self.x_shape.len()];
        self.apply_into(x.data(), &mut out)?;
        Image::new(self.x_shape, out)
    }

    /// `M* x` with one `UUᵀ` product per window.
    pub fn apply_sequential(&self, x: &Image) -> Result<Image> {
        let xd = x.data();
        let mut out = vec![0.0; self.x_shape.len()];
        self.check(xd, &out)?;
        for (o, (d, v)) in out.iter_mut().zip(self.diagonal.iter().zip(xd)) {
            *o = d * v;
        }
        let ylen = self.y_shape.len();
        let mut w = vec![0.0; ylen];
        for &k in &self.offsets {
            self.crop_into(xd, k, &mut w);
            let c = self.u.tr_mul(&nalgebra::DVectorView::from_slice(&w, ylen));
            let p = &*self.u * c;
            self.pad_sub(p.as_slice(), k, self.alpha, &mut out);
        }
        Image::new(self.x_shape, out)
    }

    /// Per-entry responses `R[k] = xᵀ M_k x = ‖(I - UUᵀ) B_k x‖²` for the
    /// active entries, as `(filter index, response)` in index order.
    pub fn responses(&self, x: &Image) -> Result<Vec<(usize, f64)>> {
        if x.shape() != self.x_shape {
            return Err(MfbdError::Dimension(format!(
                "image is {}, operator expects {}",
                x.shape(),
                self.x_shape
            )));
        }
        let ylen = self.y_shape.len();
        let mut w = vec![0.0; ylen];
        let active: Vec<usize> = self.footprint.active().collect();
        let mut out = Vec::with_capacity(active.len());
        for (&k, &off) in active.iter().zip(&self.offsets) {
            self.crop_into(x.data(), off, &mut w);
            let c = self.u.tr_mul(&nalgebra::DVectorView::from_slice(&w, ylen));
            // ‖w‖² - ‖Uᵀw‖² with U orthonormal
            out.push((k, (dot(&w, &w) - c.norm_squared()).max(0.0)));
        }
        Ok(out)
    }
}

impl SymmetricOperator for MStarOperator {
    fn dim(&self) -> usize {
        self.x_shape.len()
    }

    /// `1 + α|a|`: each `M_k` is bounded by 1 and `Q(h)` is binary.
    fn eigenvalue_bound(&self) -> f64 {
        1.0 + self.alpha * self.footprint.shape().len() as f64
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(x, out)?;
        for (o, (d, v)) in out.iter_mut().zip(self.diagonal.iter().zip(x)) {
            *o = d * v;
        }
        let ylen = self.y_shape.len();
        let m = self.u.ncols();
        let batch = self.batch.min(self.offsets.len()).max(1);
        let mut windows = vec![0.0; ylen * batch];
        let mut coef = DMatrix::zeros(m, batch);
        for chunk in self.offsets.chunks(batch) {
            let b = chunk.len();
            for (j, &k) in chunk.iter().enumerate() {
                self.crop_into(x, k, &mut windows[j * ylen..(j + 1) * ylen]);
            }
            let mut wv = DMatrixViewMut::from_slice(&mut windows[..ylen * b], ylen, b);
            let mut cv = coef.columns_mut(0, b);
            cv.gemm_tr(1.0, &*self.u, &wv, 0.0);
            wv.gemm(1.0, &*self.u, &cv, 0.0);
            for (j, &k) in chunk.iter().enumerate() {
                self.pad_sub(&windows[j * ylen..(j + 1) * ylen], k, self.alpha, out);
            }
        }
        Ok(())
    }
}

/// Convergence history of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    /// Rayleigh quotients of `M*`, starting with the initial value.
    pub mu_history: Vec<f64>,
    /// Inner solver steps per outer iteration (0 for the initial entry).
    pub inner_iterations: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖M* x - μ x‖` at the returned unit vector.
    pub residual: f64,
    /// Outer iterations whose inner solve missed its tolerance.
    pub inner_stagnations: usize,
    /// Whether the solve ended with power-iteration refinement.
    pub fell_back: bool,
}

impl SolveReport {
    /// CSV with header `iteration,mu,inner_iterations`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,mu,inner_iterations\n");
        for (i, mu) in self.mu_history.iter().enumerate() {
            let inner = self.inner_iterations.get(i).copied().unwrap_or(0);
            let _ = writeln!(s, "{i},{mu:?},{inner}");
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "{} iterations, converged: {}, final μ: {:?}, residual: {:?}, inner stagnations: {}, fell back: {}",
            self.iterations,
            self.converged,
            self.mu_history.last().copied().unwrap_or(f64::NAN),
            self.residual,
            self.inner_stagnations,
            self.fell_back
        )
    }
}

/// `A` restricted to the orthogonal complement of a unit vector `x`, with
/// `x` itself moved to the top of the spectrum.
pub struct Deflated<'a, O: SymmetricOperator + ?Sized> {
    op: &'a O,
    x: &'a [f64],
}

impl<'a, O: SymmetricOperator + ?Sized> Deflated<'a, O> {
    pub fn new(op: &'a O, x: &'a [f64]) -> Self {
        Self { op, x }
    }
}

impl<O: SymmetricOperator + ?Sized> SymmetricOperator for Deflated<'_, O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn eigenvalue_bound(&self) -> f64 {
        self.op.eigenvalue_bound()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let c = dot(self.x, v);
        let p: Vec<f64> = v.iter().zip(self.x).map(|(a, b)| a - c * b).collect();
        self.op.apply_into(&p, out)?;
        let d = dot(self.x, out);
        let top = self.op.eigenvalue_bound();
        for (o, b) in out.iter_mut().zip(self.x) {
            *o += (top * c - d) * b;
        }
        Ok(())
    }
}

/// Second smallest eigenvalue of `op` given the bottom unit eigenvector
/// `x`, by Rayleigh quotient iterations on the deflated operator.
pub fn second_eigenvalue<O: SymmetricOperator + ?Sized>(
    op: &O,
    x: &[f64],
    cfg: &RayleighConfig,
) -> Result<f64> {
    let d = Deflated::new(op, x);
    let (v, _) = rayleigh_solve(&d, cfg)?;
    d.rayleigh_quotient(&v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    pub mu_delta: f64,
    pub max_iter: usize,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            mu_delta: 1e-4,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighConfig {
    pub mu0: f64,
    pub mu_delta: f64,
    pub max_outer: usize,
    /// The stopping test is applied from this outer iteration on. With 2,
    /// the first shift actually taken from a Rayleigh quotient is used
    /// before convergence is declared.
    pub min_outer: usize,
    pub krylov: KrylovConfig,
    pub fallback: PowerConfig,
    pub seed: u64,
}

impl Default for RayleighConfig {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            mu_delta: 1e-3,
            max_outer: 50,
            min_outer: 2,
            krylov: KrylovConfig::default(),
            fallback: PowerConfig::default(),
            seed: 0,
        }
    }
}

fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if !(n > 0.0 && n.is_finite()) {
        return Err(MfbdError::Numeric("cannot normalize a zero or non-finite vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

fn residual<O: SymmetricOperator + ?Sized>(op: &O, x: &[f64]) -> Result<(f64, f64)> {
    let ax = op.apply_vec(x)?;
    let mu = dot(x, &ax) / dot(x, x);
    let r = ax.iter().zip(x).map(|(a, v)| (a - mu * v).powi(2)).sum::<f64>().sqrt();
    Ok((mu, r))
}

/// Rayleigh quotient iterations from a random start: solve
/// `(M* - μ I) x' = x`, normalize, update `μ` to the Rayleigh quotient,
/// until `μ` changes by less than `μ_Δ`. Returns a unit vector.
pub fn rayleigh_solve<O: SymmetricOperator + ?Sized>(
    op: &O,
    cfg: &RayleighConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x0: Vec<f64> = (0..op.dim()).map(|_| rng.random::<f64>()).collect();
    rayleigh_solve_from(op, x0, cfg)
}

/// [`rayleigh_solve`] from a given start vector.
pub fn rayleigh_solve_from<O: SymmetricOperator + ?Sized>(
    op: &O,
    x0: Vec<f64>,
    cfg: &RayleighConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let mut x = normalized(x0)?;
    let mut report = SolveReport {
        mu_history: vec![cfg.mu0],
        inner_iterations: vec![0],
        ..Default::default()
    };
    let mut mu_next = cfg.mu0;
    let mut quotient = op.rayleigh_quotient(&x)?;
    for it in 1..=cfg.max_outer {
        let mu = mu_next;
        let sol = minres(op, mu, &x, &cfg.krylov)?;
        report.iterations = it;
        report.inner_iterations.push(sol.iterations);
        let candidate = normalized(sol.x)?;
        let q = op.rayleigh_quotient(&candidate)?;
        if !sol.converged {
            report.inner_stagnations += 1;
            if q > quotient {
                // The unconverged solve made things worse.
                log::warn!(
                    "inner solve stagnated at relative residual {:.3e}; refining by power iterations",
                    sol.rel_residual
                );
                report.mu_history.push(quotient);
                let (refined, power) = power_refine(op, &x, &cfg.fallback)?;
                report.fell_back = true;
                report.converged = power.converged;
                report.mu_history.extend(power.mu_history.iter().skip(1));
                report.inner_iterations.resize(report.mu_history.len(), 0);
                report.residual = power.residual;
                return Ok((refined, report));
            }
        }
        x = candidate;
        quotient = q;
        mu_next = q;
        report.mu_history.push(q);
        if it >= cfg.min_outer && (mu_next - mu).abs() < cfg.mu_delta {
            report.converged = true;
            break;
        }
    }
    report.residual = residual(op, &x)?.1;
    if x.iter().sum::<f64>() < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    if !report.converged {
        return Err(MfbdError::Numeric(format!(
            "Rayleigh quotient iterations did not converge: {}",
            report.summary()
        )));
    }
    Ok((x, report))
}

/// Power iterations on `Z = μ_up I - M*` with `μ_up` the operator's
/// eigenvalue bound, until the quotient changes by less than `μ_Δ`.
/// The report lists Rayleigh quotients of `M*` (`μ_up - xᵀZx`).
pub fn power_refine<O: SymmetricOperator + ?Sized>(
    op: &O,
    x0: &[f64],
    cfg: &PowerConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    let up = op.eigenvalue_bound();
    let z = |x: &[f64]| -> Result<Vec<f64>> {
        let mut w = op.apply_vec(x)?;
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi = up * xi - *wi;
        }
        Ok(w)
    };
    let mut x = normalized(x0.to_vec())?;
    let mut w = z(&x)?;
    let mut mu = dot(&x, &w);
    let mut report = SolveReport {
        mu_history: vec![up - mu],
        inner_iterations: vec![0],
        ..Default::default()
    };
    for it in 1..=cfg.max_iter {
        let prev = mu;
        x = normalized(w)?;
        w = z(&x)?;
        mu = dot(&x, &w);
        report.iterations = it;
        report.mu_history.push(up - mu);
        report.inner_iterations.push(0);
        if (mu - prev).abs() < cfg.mu_delta {
            report.converged = true;
            break;
        }
    }
    // w = Z x, so M* x - μ x = -(w - (xᵀw) x)
    report.residual = w.iter().zip(&x).map(|(a, v)| (a - mu * v).powi(2)).sum::<f64>().sqrt();
    Ok((x, report))
}

/// How the estimate is updated after entries are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    /// Power iterations on the spectrally shifted operator.
    Power,
    /// Rayleigh quotient iterations started from the previous estimate.
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintConfig {
    /// `None` selects `1/|a|`.
    pub alpha: Option<f64>,
    pub rayleigh: RayleighConfig,
    pub power: PowerConfig,
    pub refinement: Refinement,
    /// Entries zeroed per iteration: `ceil(excess / divisor)` clamped to
    /// `1..=max_zeroed`.
    pub divisor: usize,
    pub max_zeroed: usize,
    /// Responses closer than this (relative to the largest) count as
    /// indistinguishable.
    pub tie_rtol: f64,
}

impl Default for FootprintConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            rayleigh: RayleighConfig::default(),
            power: PowerConfig::default(),
            refinement: Refinement::Rayleigh,
            divisor: 4,
            max_zeroed: 8,
            tie_rtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FootprintEstimate {
    pub footprint: Footprint,
    /// Unit-norm estimate for the final footprint.
    pub x: Image,
    /// Filter indices zeroed, one list per iteration.
    pub removed: Vec<Vec<usize>>,
    pub warning: Option<String>,
}

/// Alternating estimation of the footprint and the image: start from the
/// all-ones footprint, repeatedly zero the entries with the largest
/// responses `R[k]` and refine the estimate, until `⟨1, h⟩ = m`.
pub fn estimate_footprint(
    s: &SignalSubspace,
    x_shape: Shape2,
    psf_shape: Shape2,
    cfg: &FootprintConfig,
) -> Result<FootprintEstimate> {
    let m = s.m();
    if m > psf_shape.len() {
        return Err(MfbdError::Config(format!(
            "signal subspace dimension {m} exceeds the filter size {}",
            psf_shape.len()
        )));
    }
    let mut op = MStarOperator::new(s, Footprint::all_ones(psf_shape), x_shape, cfg.alpha)?;
    let (mut x, _) = rayleigh_solve(&op, &cfg.rayleigh)?;
    let mut removed = Vec::new();
    let mut warning = None;
    while op.footprint().count() > m {
        let count = op.footprint().count();
        let mut resp = op.responses(&Image::new(x_shape, x.clone())?)?;
        let top = resp.iter().map(|r| r.1).fold(0.0, f64::max);
        let low = resp.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        if top - low <= cfg.tie_rtol * top {
            let msg = format!(
                "responses indistinguishable with {count} active entries (target {m}); stopping"
            );
            log::warn!("{msg}");
            warning = Some(msg);
            break;
        }
        let excess = count - m;
        let zero = excess.div_ceil(cfg.divisor.max(1)).clamp(1, cfg.max_zeroed.max(1)).min(excess);
        // largest first; ties broken by the lower index
        resp.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut h = op.footprint().clone();
        let picked: Vec<usize> = resp[..zero].iter().map(|r| r.0).collect();
        for &k in &picked {
            h.deactivate(k);
        }
        removed.push(picked);
        op = op.with_footprint(h)?;
        x = match cfg.refinement {
            Refinement::Power => power_refine(&op, &x, &cfg.power)?.0,
            Refinement::Rayleigh => {
                let rq = RayleighConfig {
                    mu0: op.rayleigh_quotient(&x)?,
                    ..cfg.rayleigh
                };
                rayleigh_solve_from(&op, x, &rq)?.0
            }
        };
    }
    Ok(FootprintEstimate {
        footprint: op.footprint().clone(),
        x: Image::new(x_shape, x)?,
        removed,
        warning,
    })
}

/// Parameters of the section-based footprint estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionConfig {
    /// Section of the (inflated, if `inflate` is set) observations.
    pub section: Shape2,
    pub svd: SvdBackendChoice,
    pub dimension: DimensionStrategy,
    /// Inflating filter shape and the dimension rule after inflating.
    pub inflate: Option<(Shape2, DimensionStrategy)>,
    pub footprint: FootprintConfig,
}

/// Footprint from centered sections of the observations: the subspace is
/// recomputed on the sections (and inflated if requested) and
/// [`estimate_footprint`] runs on that smaller problem. The returned
/// footprint has the (inflated) filter shape.
pub fn estimate_footprint_sectioned(
    y: &ObservationSet,
    psf_shape: Shape2,
    cfg: &SectionConfig,
) -> Result<FootprintEstimate> {
    let (psf, raw_section) = match cfg.inflate {
        Some((d, _)) => (psf_shape.full(d), cfg.section.full(d)),
        None => (psf_shape, cfg.section),
    };
    if cfg.section.rows < 3 * psf.rows || cfg.section.cols < 3 * psf.cols {
        return Err(MfbdError::Config(format!(
            "section {} is smaller than three times the filter {psf}",
            cfg.section
        )));
    }
    if !raw_section.fits_in(y.y_shape()) {
        return Err(MfbdError::Config(format!(
            "section {} does not fit the frames {}",
            cfg.section,
            y.y_shape()
        )));
    }
    let sub = y.cropped_centered(raw_section)?;
    let mut svd = cfg.svd.clone();
    svd.rank = svd.rank.min(raw_section.len()).min(y.len());
    let mut s = identify_subspace(&sub, &svd, cfg.dimension)?;
    if let Some((d, strategy)) = cfg.inflate {
        s = inflate(&s, d, strategy)?;
    }
    let x_shape = cfg.section.full(psf);
    estimate_footprint(&s, x_shape, psf, &cfg.footprint)
}

/// Scaled estimate and whether scaling was skipped.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub image: Image,
    pub warning: Option<String>,
}

/// Flips `x` to a non-negative mean and scales it so its mean equals
/// `target_mean`; optionally clamps to `[0, 255]`.
pub fn post_scale_to_mean(x: &Image, target_mean: f64, clamp: bool) -> Scaled {
    let mean = x.mean();
    let mut image = if mean < 0.0 { x.scaled(-1.0) } else { x.clone() };
    let mut warning = None;
    let mean = mean.abs();
    if mean <= f64::MIN_POSITIVE || target_mean == 0.0 || !target_mean.is_finite() {
        let msg = format!("post-scaling skipped: estimate mean {mean:e}, target mean {target_mean:e}");
        log::warn!("{msg}");
        warning = Some(msg);
    } else {
        image = image.scaled(target_mean / mean);
    }
    if clamp {
        image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    }
    Scaled { image, warning }
}

/// [`post_scale_to_mean`] with the mean pixel value of the observations.
pub fn post_scale(x: &Image, y: &ObservationSet, clamp: bool) -> Result<Scaled> {
    Ok(post_scale_to_mean(x, y.mean_pixel()?, clamp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseSymmetric;
    use crate::testimages::uniform_noise;

    fn subspace(y: Shape2, m: usize, seed: u64) -> SignalSubspace {
        let noise = uniform_noise(Shape2::of(y.len(), m), seed);
        let q = crate::linalg::orthonormalize(DMatrix::from_row_slice(y.len(), m, noise.data()));
        SignalSubspace::new(y, q, vec![1.0; m], m, 10).unwrap()
    }

    #[test]
    fn batched_equals_sequential() {
        let s = subspace(Shape2::of(7, 6), 3, 1);
        let h = Footprint::new(Shape2::of(3, 3), vec![true, true, false, true, true, true, false, true, true]).unwrap();
        let mut op = MStarOperator::new(&s, h, Shape2::of(9, 8), None).unwrap();
        let x = uniform_noise(Shape2::of(9, 8), 2);
        let seq = op.apply_sequential(&x).unwrap();
        for b in [1, 2, 3] {
            op.set_batch(b);
            assert!(op.apply(&x).unwrap().max_abs_diff(&seq) < 1e-12 * seq.max_abs());
        }
    }

    #[test]
    fn shifted_spd_bottom_eigenvector() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0, 2.0, 3.0, 5.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>());
        let q = crate::linalg::orthonormalize(g);
        let a = &q * d * q.transpose();
        let op = DenseSymmetric(a);
        let (x, rep) = rayleigh_solve(&op, &RayleighConfig::default()).unwrap();
        let cos = q.column(0).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().abs();
        assert!(cos > 1.0 - 1e-10, "cos {cos}, {}", rep.summary());
        assert_eq!(rep.mu_history.len(), rep.iterations + 1);
    }

    #[test]
    fn deflation_exposes_second_eigenvalue() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.3, 0.7, 1.5, 2.0]));
        let x = [1.0, 0.0, 0.0, 0.0];
        let mu2 = second_eigenvalue(&DenseSymmetric(a), &x, &RayleighConfig::default()).unwrap();
        assert!((mu2 - 0.7).abs() < 1e-9, "{mu2}");
    }

    #[test]
    fn power_refine_keeps_eigenvector() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.1, 1.0, 2.0]));
        let (x, rep) = power_refine(&DenseSymmetric(a), &[1.0, 0.0, 0.0], &PowerConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!((x[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn post_scale_paths() {
        let x = Image::new(Shape2::of(1, 3), vec![-1.0, -2.0, -3.0]).unwrap();
        let s = post_scale_to_mean(&x, 10.0, false);
        assert!(s.warning.is_none());
        assert!((s.image.mean() - 10.0).abs() < 1e-12);
        assert!(s.image.data().iter().all(|&v| v > 0.0));
        let z = post_scale_to_mean(&Image::zeros(Shape2::of(2, 2)), 10.0, true);
        assert!(z.warning.is_some());
        let dark = post_scale_to_mean(&x, 0.0, false);
        assert!(dark.warning.is_some());
    }

    #[test]
    fn all_ones_footprint_skips_loop() {
        let s = subspace(Shape2::of(6, 6), 4, 3);
        let est = estimate_footprint(&s, Shape2::of(7, 7), Shape2::of(2, 2), &FootprintConfig::default()).unwrap();
        assert_eq!(est.footprint.count(), 4);
        assert!(est.removed.is_empty());
    }
}
