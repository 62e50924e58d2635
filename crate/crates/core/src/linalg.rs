//! Small dense helpers and a matrix-free MINRES solver for symmetric
//! (possibly indefinite) shifted systems.

use nalgebra::DMatrix;

use crate::error::{MfbdError, Result};
use crate::image::{axpy, dot, norm};

/// Orthonormal basis of the column space of `m` (thin QR). Columns are
/// kept in order; rank deficiency is not detected.
pub fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows().min(m.ncols());
    let mut q = m.qr().q();
    if q.ncols() > k {
        q = q.columns(0, k).into_owned();
    }
    q
}

/// Thin SVD `m = U diag(s) Vᵀ` with singular values sorted descending.
/// Tall matrices are reduced by a QR step first.
pub fn svd_sorted(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if rows < cols {
        let (v, s, u) = svd_sorted(&m.transpose());
        return (u, s, v);
    }
    let (u, s, v_t) = if rows > 2 * cols {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, true);
        (q * svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    } else {
        let svd = m.clone().svd(true, true);
        (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap())
    };
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    let s = order.iter().map(|&i| s[i]).collect();
    (u, s, v)
}

/// Number of singular values above `rtol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.singular_values();
    let top = s.max();
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * top).count()
}

/// A symmetric linear map on `R^dim`, applied matrix-free.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    /// An upper bound of the spectrum.
    fn eigenvalue_bound(&self) -> f64;

    /// `xᵀ A x / xᵀ x`.
    fn rayleigh_quotient(&self, x: &[f64]) -> Result<f64> {
        let ax = self.apply_vec(x)?;
        Ok(dot(x, &ax) / dot(x, x))
    }
}

/// Dense symmetric matrix as an operator; used for verification.
pub struct DenseSymmetric(pub DMatrix<f64>);

impl SymmetricOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Frobenius norm.
    fn eigenvalue_bound(&self) -> f64 {
        self.0.norm()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() || out.len() != self.dim() {
            return Err(MfbdError::Dimension(format!(
                "vector of length {} for a {}x{} matrix",
                x.len(),
                self.dim(),
                self.dim()
            )));
        }
        let m = &self.0;
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|c| m[(r, c)] * x[c]).sum();
        }
        Ok(())
    }
}

/// Stopping rule for [`minres`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    /// Target `‖b - (A - σI)x‖ / ‖b‖`.
    pub tol: f64,
    /// Lanczos steps per cycle.
    pub max_iter: usize,
    /// Extra cycles restarted from the current iterate.
    pub restarts: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            restarts: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solves `(A - shift·I) x = b` by MINRES (Paige & Saunders) starting
/// from zero.
pub fn minres<O: SymmetricOperator + ?Sized>(
    op: &O,
    shift: f64,
    b: &[f64],
    cfg: &KrylovConfig,
) -> Result<MinresOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(MfbdError::Dimension(format!(
            "right-hand side of length {} for dimension {n}",
            b.len()
        )));
    }
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(MinresOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let mut total = 0;
    let mut rel = 1.0;
    let mut r0 = b.to_vec();
    for cycle in 0..=cfg.restarts {
        if cycle > 0 {
            // true residual of the current iterate
            let ax = op.apply_vec(&x)?;
            for i in 0..n {
                r0[i] = b[i] - (ax[i] - shift * x[i]);
            }
            rel = norm(&r0) / bnorm;
            if rel < cfg.tol {
                break;
            }
        }
        let (dx, steps, est) = minres_cycle(op, shift, &r0, cfg.tol * bnorm, cfg.max_iter)?;
        axpy(1.0, &dx, &mut x);
        total += steps;
        rel = est / bnorm;
        if steps < cfg.max_iter && rel < cfg.tol {
            break;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(MfbdError::Numeric("MINRES produced non-finite values".into()));
    }
    Ok(MinresOutcome {
        x,
        iterations: total,
        rel_residual: rel,
        converged: rel < cfg.tol,
    })
}

/// One MINRES cycle on `(A - shift·I) x = r0`; returns the update, the
/// step count and the residual norm estimate.
fn minres_cycle<O: SymmetricOperator + ?Sized>(
    op: &O,
    shift: f64,
    r0: &[f64],
    abs_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = r0.len();
    let beta1 = norm(r0);
    let mut x = vec![0.0; n];
    let mut r1 = r0.to_vec();
    let mut r2 = r0.to_vec();
    let mut y = r0.to_vec();
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln, mut phibar) = (0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0_f64, 0.0_f64);
    let mut steps = 0;

    while steps < max_iter {
        steps += 1;
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        op.apply_into(&v, &mut y)?;
        axpy(-shift, &v, &mut y);
        if steps >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        oldb = beta;
        beta = norm(&y);

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        let inv = 1.0 / gamma;
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * inv;
        }
        axpy(phi, &w, &mut x);

        if phibar < abs_tol || beta == 0.0 {
            break;
        }
    }
    Ok((x, steps, phibar))
}
