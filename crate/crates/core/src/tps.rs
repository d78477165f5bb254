//! Thin-plate-spline system for a set of control points: the radial kernel,
//! the polynomial design matrix `X`, the kernel matrix `Phi`, the projector
//! `Q = I - X (X'X)^{-1} X'` and the penalty operator `Q Phi Q`.
//!
//! `Q Phi Q` is assembled without any `n x n` by `n x n` product:
//!
//! ```text
//! Xt   = (X'X)^{-1} X'            (d+1) x n
//! Qt   = Phi - (Phi X) Xt         n x n, O(n^2 d)
//! QPQ  = Qt - Xt' (X' Qt)         n x n, O(n^2 d)
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, symmetrized};
use crate::locations::LocationSet;

/// Default relative tolerance for exact-algebra identities.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Radial thin-plate kernel as a function of distance `r` for dimension `d`.
///
/// `d = 2` uses the continuous limit `0` at `r = 0`. Callers must pass `d` in {1, 2, 3}.
#[inline]
pub(crate) fn radial(r: f64, d: usize) -> f64 {
    match d {
        1 => r * r * r / 12.0,
        2 => {
            if r == 0.0 {
                0.0
            } else {
                r * r * r.ln() / (8.0 * PI)
            }
        }
        _ => -r / 8.0,
    }
}

/// Thin-plate kernel `phi_i(s)` for the point `s` and the center `s_i`.
pub fn tps_kernel(s: &[f64], center: &[f64]) -> Result<f64> {
    let d = s.len();
    if !(1..=3).contains(&d) {
        return Err(Error::Dimension(d));
    }
    if center.len() != d {
        return Err(Error::Shape(format!("point has {d} coordinates, center has {}", center.len())));
    }
    Ok(radial(euclid(s, center), d))
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Kernel matrix `K[i][j] = phi(sites_i, centers_j)`, rows filled in parallel.
pub fn kernel_matrix(sites: &DMatrix<f64>, centers: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = centers.ncols();
    if !(1..=3).contains(&d) {
        return Err(Error::Dimension(d));
    }
    if sites.ncols() != d {
        return Err(Error::Shape(format!(
            "sites have {} columns, control points have {d}",
            sites.ncols()
        )));
    }
    let (m, n) = (sites.nrows(), centers.nrows());
    let cen: Vec<Vec<f64>> = centers.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let s: Vec<f64> = sites.row(i).iter().copied().collect();
            cen.iter().map(|c| radial(euclid(&s, c), d)).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

/// The assembled thin-plate-spline objects for one location set.
#[derive(Debug, Clone)]
pub struct TpsSystem {
    locs: LocationSet,
    x: DMatrix<f64>,
    phi: DMatrix<f64>,
    /// `(X'X)^{-1} X'`
    x_pinv: DMatrix<f64>,
    q: DMatrix<f64>,
    qphiq: DMatrix<f64>,
    tolerance: f64,
}

impl TpsSystem {
    pub fn build(locs: LocationSet) -> Result<Self> {
        Self::with_tolerance(locs, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(locs: LocationSet, tolerance: f64) -> Result<Self> {
        let n = locs.n();
        let x = locs.design_matrix();
        let phi = kernel_matrix(locs.coords(), locs.coords())?;

        let xtx = x.transpose() * &x;
        let xtx_inv = xtx.try_inverse().ok_or(Error::DegenerateGeometry {
            rank: 0,
            expected: locs.dim() + 1,
        })?;
        let x_pinv = &xtx_inv * x.transpose();

        let phi_x = &phi * &x;
        let q_tilde = &phi - &phi_x * &x_pinv;
        let xt_qt = x.transpose() * &q_tilde;
        let qphiq = symmetrized(&(&q_tilde - x_pinv.transpose() * xt_qt));

        let q = DMatrix::identity(n, n) - &x * &x_pinv;

        Ok(TpsSystem { locs, x, phi, x_pinv, q, qphiq, tolerance })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locs
    }

    pub fn n(&self) -> usize {
        self.locs.n()
    }

    pub fn dim(&self) -> usize {
        self.locs.dim()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn qphiq(&self) -> &DMatrix<f64> {
        &self.qphiq
    }

    /// `(X'X)^{-1} X'`
    pub fn x_pinv(&self) -> &DMatrix<f64> {
        &self.x_pinv
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Kernel vector `phi(s)` against all control points.
    pub fn kernel_vector(&self, s: &[f64]) -> Result<DVector<f64>> {
        if s.len() != self.dim() {
            return Err(Error::Shape(format!("expected {} coordinates, got {}", self.dim(), s.len())));
        }
        let d = self.dim();
        Ok(DVector::from_iterator(
            self.n(),
            self.locs.coords().row_iter().map(|c| {
                let c: Vec<f64> = c.iter().copied().collect();
                radial(euclid(s, &c), d)
            }),
        ))
    }

    /// Roughness `J(f) = alpha' Phi alpha` of a natural spline with kernel weights `alpha`.
    ///
    /// Fails unless `X' alpha = 0` to within the system tolerance, relative to
    /// `max|X| * |alpha|`.
    pub fn roughness(&self, alpha: &DVector<f64>) -> Result<f64> {
        if alpha.len() != self.n() {
            return Err(Error::Shape(format!("alpha has {} entries, expected {}", alpha.len(), self.n())));
        }
        let residual = (self.x.transpose() * alpha).amax();
        let tolerance = self.tolerance * max_abs(&self.x).max(1.0) * alpha.amax().max(f64::MIN_POSITIVE) * self.n() as f64;
        if residual > tolerance {
            return Err(Error::ConstraintViolation { residual, tolerance });
        }
        Ok(alpha.dot(&(&self.phi * alpha)).max(0.0))
    }
}
