//! The ordered multi-resolution thin-plate-spline basis.
//!
//! For `K` functions on control points `s_1..s_n` in `R^d`:
//!
//! * `f_1 = 1`, `f_{j+1} = x_j` for `j = 1..d`;
//! * `f_{d+1+k}(s) = lambda_k^{-1} (phi(s)'v_k - x(s)' (X'X)^{-1} X' Phi v_k)`
//!   for the `k`-th leading eigenpair `(lambda_k, v_k)` of `Q Phi Q`.
//!
//! The functions are ordered by roughness, `J(f_{d+1+k}) = 1 / lambda_k`, and
//! at the control points the non-polynomial columns reproduce `v_k` exactly.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::{top_eigenpairs, EigenConfig};
use crate::error::{Error, Result};
use crate::locations::{polynomial_rows, LocationSet};
use crate::tps::{kernel_matrix, TpsSystem};

/// A finite set of real functions on `R^d` that can be evaluated on a batch of sites.
pub trait SpatialBasis: Send + Sync {
    /// Number of functions.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    /// `m x len()` matrix of function values at the `m x dim()` sites.
    fn evaluate(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// The basis at a location set; overridden where a closed form at the sites exists.
    fn design(&self, locs: &LocationSet) -> Result<DMatrix<f64>> {
        self.evaluate(locs.coords())
    }
}

/// Relative threshold below which an eigenvalue of `Q Phi Q` counts as zero.
const RANK_FLOOR: f64 = 1e-10;

/// Relative gap under which consecutive eigenvalues are reported as tied.
const TIE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MrtsBasis {
    locs: LocationSet,
    k: usize,
    eigvals: Vec<f64>,
    /// `n x (K-d-1)`, orthonormal columns orthogonal to `X`
    eigvecs: DMatrix<f64>,
    /// `(X'X)^{-1} X' Phi V`, `(d+1) x (K-d-1)`
    proj_coeffs: DMatrix<f64>,
    /// Positions `j` with `lambda_j` and `lambda_{j+1}` numerically tied.
    ties: Vec<usize>,
}

impl MrtsBasis {
    /// Builds the first `k` functions from the leading `k - d - 1` eigenpairs of `Q Phi Q`.
    pub fn compute(system: &TpsSystem, k: usize) -> Result<Self> {
        Self::compute_with(system, k, &EigenConfig::default())
    }

    pub fn compute_with(system: &TpsSystem, k: usize, cfg: &EigenConfig) -> Result<Self> {
        let (n, d) = (system.n(), system.dim());
        if k < d + 1 || k > n {
            return Err(Error::BasisRange { k, min: d + 1, max: n });
        }
        let m = k - d - 1;
        let pairs = top_eigenpairs(system.qphiq(), m, cfg)?;
        if let Some(&lead) = pairs.values.first() {
            for (j, &lam) in pairs.values.iter().enumerate() {
                if !(lam > RANK_FLOOR * lead) {
                    return Err(Error::RankExhausted { index: j + 1, ratio: lam / lead });
                }
            }
        }
        let ties = pairs
            .values
            .windows(2)
            .enumerate()
            .filter(|(_, w)| (w[0] - w[1]).abs() <= TIE_GAP * pairs.values[0])
            .map(|(j, _)| j)
            .collect();
        // Exact eigenvectors are orthogonal to the polynomials; remove the rounding-level
        // leak, which Phi and 1/lambda would otherwise amplify for small eigenvalues.
        let eigvecs = &pairs.vectors - system.x() * (system.x_pinv() * &pairs.vectors);
        let proj_coeffs = system.x_pinv() * (system.phi() * &eigvecs);
        Ok(MrtsBasis {
            locs: system.locations().clone(),
            k,
            eigvals: pairs.values,
            eigvecs,
            proj_coeffs,
            ties,
        })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locs
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn projection_coefficients(&self) -> &DMatrix<f64> {
        &self.proj_coeffs
    }

    pub fn ties(&self) -> &[usize] {
        &self.ties
    }

    /// Roughness of each function, `0` for the polynomial part.
    pub fn roughness(&self) -> Vec<f64> {
        let d = self.locs.dim();
        std::iter::repeat_n(0.0, d + 1).chain(self.eigvals.iter().map(|l| 1.0 / l)).collect()
    }

    /// The leading `k` functions, sharing the stored eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        let d = self.locs.dim();
        if k < d + 1 || k > self.k {
            return Err(Error::BasisRange { k, min: d + 1, max: self.k });
        }
        let m = k - d - 1;
        Ok(MrtsBasis {
            locs: self.locs.clone(),
            k,
            eigvals: self.eigvals[..m].to_vec(),
            eigvecs: self.eigvecs.columns(0, m).into_owned(),
            proj_coeffs: self.proj_coeffs.columns(0, m).into_owned(),
            ties: self.ties.iter().copied().filter(|&j| j + 1 < m).collect(),
        })
    }

    /// Copy with the sign of eigenfunction `j` (0-based, among the non-polynomial ones) reversed.
    pub fn with_flipped_sign(&self, j: usize) -> Self {
        let mut out = self.clone();
        out.eigvecs.column_mut(j).neg_mut();
        out.proj_coeffs.column_mut(j).neg_mut();
        out
    }

    /// `F'F` with `F` the basis evaluated at the control points.
    pub fn gram_at_controls(&self) -> DMatrix<f64> {
        let f = self.controls_design();
        f.transpose() * f
    }

    /// The basis at the control points, `n x K`, with the eigenvector columns taken as stored.
    pub fn controls_design(&self) -> DMatrix<f64> {
        let x = self.locs.design_matrix();
        let (n, p) = x.shape();
        let mut f = DMatrix::zeros(n, self.k);
        f.columns_mut(0, p).copy_from(&x);
        f.columns_mut(p, self.eigvecs.ncols()).copy_from(&self.eigvecs);
        f
    }

    pub fn to_record(&self) -> BasisRecord {
        BasisRecord::from(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BasisRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<BasisRecord>(s)?.try_into()
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl SpatialBasis for MrtsBasis {
    fn len(&self) -> usize {
        self.k
    }

    fn dim(&self) -> usize {
        self.locs.dim()
    }

    fn evaluate(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let d = self.locs.dim();
        if sites.ncols() != d {
            return Err(Error::Shape(format!("sites have {} columns, basis is {d}-dimensional", sites.ncols())));
        }
        let poly = polynomial_rows(sites);
        let mut out = DMatrix::zeros(sites.nrows(), self.k);
        out.columns_mut(0, d + 1).copy_from(&poly);
        if !self.eigvals.is_empty() {
            let kern = kernel_matrix(sites, self.locs.coords())?;
            let mut rest = kern * &self.eigvecs - poly * &self.proj_coeffs;
            for (mut col, lam) in rest.column_iter_mut().zip(&self.eigvals) {
                col /= *lam;
            }
            out.columns_mut(d + 1, self.eigvals.len()).copy_from(&rest);
        }
        Ok(out)
    }

    // at its own control points the basis is exactly [X, V]
    fn design(&self, locs: &LocationSet) -> Result<DMatrix<f64>> {
        if locs == &self.locs {
            Ok(self.controls_design())
        } else {
            self.evaluate(locs.coords())
        }
    }
}

pub const BASIS_FORMAT: &str = "mrts-basis";
pub const BASIS_VERSION: u32 = 1;

/// Versioned JSON container; matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRecord {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n: usize,
    pub k: usize,
    pub control_points: Vec<f64>,
    pub eigvals: Vec<f64>,
    pub eigvecs: Vec<f64>,
    pub proj_coeffs: Vec<f64>,
    #[serde(default)]
    pub ties: Vec<usize>,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub(crate) fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!("expected {rows}x{cols} entries, found {}", data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl From<&MrtsBasis> for BasisRecord {
    fn from(b: &MrtsBasis) -> Self {
        BasisRecord {
            format: BASIS_FORMAT.into(),
            version: BASIS_VERSION,
            dim: b.locs.dim(),
            n: b.locs.n(),
            k: b.k,
            control_points: row_major(b.locs.coords()),
            eigvals: b.eigvals.clone(),
            eigvecs: row_major(&b.eigvecs),
            proj_coeffs: row_major(&b.proj_coeffs),
            ties: b.ties.clone(),
        }
    }
}

impl TryFrom<BasisRecord> for MrtsBasis {
    type Error = Error;

    fn try_from(r: BasisRecord) -> Result<Self> {
        if r.format != BASIS_FORMAT || r.version != BASIS_VERSION {
            return Err(Error::Parse(format!("unsupported basis container {} v{}", r.format, r.version)));
        }
        let locs = LocationSet::new(from_row_major(r.n, r.dim, &r.control_points)?)?;
        if r.k < r.dim + 1 || r.k > r.n {
            return Err(Error::BasisRange { k: r.k, min: r.dim + 1, max: r.n });
        }
        let m = r.k - r.dim - 1;
        if r.eigvals.len() != m {
            return Err(Error::Shape(format!("expected {m} eigenvalues, found {}", r.eigvals.len())));
        }
        Ok(MrtsBasis {
            locs,
            k: r.k,
            eigvals: r.eigvals,
            eigvecs: from_row_major(r.n, m, &r.eigvecs)?,
            proj_coeffs: from_row_major(r.dim + 1, m, &r.proj_coeffs)?,
            ties: r.ties,
        })
    }
}
