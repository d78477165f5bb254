//! Reference covariances, bisquare and conventional thin-plate comparison
//! bases, and the integrated squared error between `f(s)' M f(s*)` and a
//! target covariance over `[0,1]^d x [0,1]^d`.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};

use crate::basis::SpatialBasis;
use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, sym_eigen_desc, symmetrized, GramRoot};
use crate::locations::polynomial_rows;
use crate::tps::{euclid, kernel_matrix};

/// Known covariance functions used as approximation targets.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceCovariance {
    /// `f0(s)' diag(17, 14, 11, 8, 5, 2) f0(s*)` with the six bisquares of [`BisquareBasis::example1`].
    Example1,
    /// `exp(-2 |(s + 0.5)^-1.5 - (s* + 0.5)^-1.5|)` on `[0, 1]`.
    DeformedExponential,
    /// `20 exp(-0.4 |s - s*|)` on `[0, 1]^2`.
    Exponential2d,
    /// `sill * exp(-|s - s*| / range)` in any dimension.
    Exponential { sill: f64, range: f64 },
}

pub const EXAMPLE1_WEIGHTS: [f64; 6] = [17.0, 14.0, 11.0, 8.0, 5.0, 2.0];

impl ReferenceCovariance {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::Example1),
            "deformed" | "deformed_exponential" => Ok(Self::DeformedExponential),
            "exp2d" | "exponential2d" => Ok(Self::Exponential2d),
            _ => Err(Error::Unknown { kind: "covariance", name: name.into() }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Example1 => "example1",
            Self::DeformedExponential => "deformed_exponential",
            Self::Exponential2d => "exponential2d",
            Self::Exponential { .. } => "exponential",
        }
    }

    /// The dimension the target is defined in, if fixed.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Example1 | Self::DeformedExponential => Some(1),
            Self::Exponential2d => Some(2),
            Self::Exponential { .. } => None,
        }
    }

    pub fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        match self {
            Self::Example1 => {
                let b = BisquareBasis::example1();
                let (fs, ft) = (b.eval_point(s), b.eval_point(t));
                (0..6).map(|k| EXAMPLE1_WEIGHTS[k] * fs[k] * ft[k]).sum()
            }
            Self::DeformedExponential => {
                let warp = |x: f64| (x + 0.5).powf(-1.5);
                (-2.0 * (warp(s[0]) - warp(t[0])).abs()).exp()
            }
            Self::Exponential2d => 20.0 * (-0.4 * euclid(s, t)).exp(),
            Self::Exponential { sill, range } => sill * (-euclid(s, t) / range).exp(),
        }
    }

    /// `C(a_i, b_j)` for `m x d` and `p x d` site matrices.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::Shape("site sets differ in dimension".into()));
        }
        if let Some(d) = self.dim() {
            if a.ncols() != d {
                return Err(Error::Shape(format!("{} is defined in {d} dimension(s)", self.name())));
            }
        }
        if let Self::Example1 = self {
            let basis = BisquareBasis::example1();
            let fa = basis.evaluate(a)?;
            let fb = basis.evaluate(b)?;
            let m = DMatrix::from_diagonal(&DVector::from_column_slice(&EXAMPLE1_WEIGHTS));
            return Ok(fa * m * fb.transpose());
        }
        let rows_a: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rows_b: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(&rows_a[i], &rows_b[j])))
    }
}

/// `(1 - |s - b|^2 / r^2)^2` inside the radius, zero outside.
pub fn bisquare(s: &[f64], center: &[f64], radius: f64) -> Result<f64> {
    if radius.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidParameter(format!("bisquare radius must be positive, got {radius}")));
    }
    if s.len() != center.len() {
        return Err(Error::Shape("point and center differ in dimension".into()));
    }
    Ok(bisquare_unchecked(euclid(s, center), radius))
}

#[inline]
fn bisquare_unchecked(h: f64, r: f64) -> f64 {
    if h < r {
        let u = 1.0 - h * h / (r * r);
        u * u
    } else {
        0.0
    }
}

/// Bisquare functions with individual centers and radii.
#[derive(Debug, Clone, PartialEq)]
pub struct BisquareBasis {
    centers: DMatrix<f64>,
    radii: Vec<f64>,
}

impl BisquareBasis {
    pub fn new(centers: DMatrix<f64>, radii: Vec<f64>) -> Result<Self> {
        if centers.nrows() != radii.len() {
            return Err(Error::Shape(format!("{} centers but {} radii", centers.nrows(), radii.len())));
        }
        if !(1..=3).contains(&centers.ncols()) {
            return Err(Error::Dimension(centers.ncols()));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("bisquare radius must be positive, got {r}")));
        }
        Ok(BisquareBasis { centers, radii })
    }

    fn line(centers: impl IntoIterator<Item = f64>, radius: f64) -> Self {
        let c: Vec<f64> = centers.into_iter().collect();
        let k = c.len();
        BisquareBasis { centers: DMatrix::from_vec(k, 1, c), radii: vec![radius; k] }
    }

    /// Six functions centered at `0.2 (k - 1)` with radius `0.5`.
    pub fn example1() -> Self {
        Self::radius_family(0.5)
    }

    /// Nine functions centered at `0.11 (k - 1) + 0.06` with radius `0.165`.
    pub fn misplaced_fine() -> Self {
        Self::line((0..9).map(|k| 0.11 * k as f64 + 0.06), 0.165)
    }

    /// Six functions centered at `0.18 (k - 1) + 0.05` with radius `0.27`.
    pub fn misplaced_coarse() -> Self {
        Self::line((0..6).map(|k| 0.18 * k as f64 + 0.05), 0.27)
    }

    /// The centers of [`Self::example1`] with a common radius `r`.
    pub fn radius_family(r: f64) -> Self {
        Self::line((0..6).map(|k| 0.2 * k as f64), r)
    }

    /// Seven functions centered at `0.2 (k - 1) + delta` with radius `0.5`.
    pub fn shift_family(delta: f64) -> Self {
        Self::line((0..7).map(|k| 0.2 * k as f64 + delta), 0.5)
    }

    /// Two-resolution layouts on `[0, 1]^2`, numbered 1 to 6.
    ///
    /// The radii are the printed ones; in layouts 2 and 3 the finer centers
    /// carry the larger radius.
    pub fn layout(i: usize) -> Result<Self> {
        let grid = |pts: &[f64]| -> Vec<[f64; 2]> {
            let mut out = Vec::new();
            for &y in pts {
                for &x in pts {
                    out.push([x, y]);
                }
            }
            out
        };
        let sixths = [1.0 / 6.0, 5.0 / 6.0];
        let with_mid = |mut v: Vec<[f64; 2]>| {
            v.push([0.5, 0.5]);
            v
        };
        let (coarse, rc, fine, rf) = match i {
            1 => (grid(&[0.0, 1.0]), 1.5, grid(&[0.25, 0.75]), 0.75),
            2 => (grid(&sixths), 1.0, grid(&[0.0, 0.5, 1.0]), 1.5),
            3 => (with_mid(grid(&sixths)), SQRT_2 / 2.0, grid(&[0.0, 0.5, 1.0]), 1.5),
            4 => (grid(&[0.0, 0.5, 1.0]), 0.75, grid(&[1.0 / 6.0, 0.5, 5.0 / 6.0]), 0.5),
            5 => (grid(&sixths), 1.0, grid(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]), 0.5),
            6 => (with_mid(grid(&sixths)), SQRT_2 / 2.0, grid(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]), 0.5),
            _ => return Err(Error::Unknown { kind: "layout", name: format!("layout{i}") }),
        };
        let mut radii = vec![rc; coarse.len()];
        radii.extend(std::iter::repeat_n(rf, fine.len()));
        let all: Vec<[f64; 2]> = coarse.into_iter().chain(fine).collect();
        Self::new(DMatrix::from_fn(all.len(), 2, |r, c| all[r][c]), radii)
    }

    /// Named presets: `example1`, `misplaced_fine`, `misplaced_coarse`, `layout1` .. `layout6`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::example1()),
            "misplaced_fine" => Ok(Self::misplaced_fine()),
            "misplaced_coarse" => Ok(Self::misplaced_coarse()),
            _ => match name.strip_prefix("layout").and_then(|s| s.parse::<usize>().ok()) {
                Some(i) => Self::layout(i),
                None => Err(Error::Unknown { kind: "bisquare preset", name: name.into() }),
            },
        }
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    fn eval_point(&self, s: &[f64]) -> Vec<f64> {
        self.centers
            .row_iter()
            .zip(&self.radii)
            .map(|(c, &r)| {
                let c: Vec<f64> = c.iter().copied().collect();
                bisquare_unchecked(euclid(s, &c), r)
            })
            .collect()
    }
}

impl SpatialBasis for BisquareBasis {
    fn len(&self) -> usize {
        self.radii.len()
    }

    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn evaluate(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sites.ncols() != self.dim() {
            return Err(Error::Shape(format!("sites have {} columns, basis is {}-dimensional", sites.ncols(), self.dim())));
        }
        let mut out = DMatrix::zeros(sites.nrows(), self.len());
        for (i, row) in sites.row_iter().enumerate() {
            let s: Vec<f64> = row.iter().copied().collect();
            for (k, v) in self.eval_point(&s).into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        Ok(out)
    }
}

/// Natural thin-plate functions on `[0, 1]^2` with kernels centered on the
/// regular lattice `(l1, l2) / (L + 1)`, `1 <= l1, l2 <= L`.
///
/// The family has `L^2 + 3` members (three polynomials and `L^2` kernels),
/// but the natural-spline constraint `Xc' a = 0` on the kernel coefficients
/// leaves `L^2 - 3` free kernel directions, so `L^2` linearly independent
/// functions are evaluated; they span the same space as every natural
/// combination of the nominal family.
#[derive(Debug, Clone)]
pub struct ConventionalTpsBasis {
    l: usize,
    centers: DMatrix<f64>,
    /// orthonormal basis of the null space of `Xc'`, `L^2 x (L^2 - 3)`
    null: DMatrix<f64>,
}

impl ConventionalTpsBasis {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::InvalidParameter("lattice size must be at least 1".into()));
        }
        let step = 1.0 / (l + 1) as f64;
        let centers = DMatrix::from_fn(l * l, 2, |i, j| {
            let idx = if j == 0 { i % l } else { i / l };
            (idx + 1) as f64 * step
        });
        let xc = polynomial_rows(&centers);
        // Q_c = I - Xc Xc^+ has eigenvalue 1 on the null space of Xc', 0 elsewhere
        let svd = xc.clone().svd(true, false);
        let u = svd.u.expect("requested");
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
        let ur = u.columns(0, rank).into_owned();
        let qc = DMatrix::identity(l * l, l * l) - &ur * ur.transpose();
        let (_, vecs) = sym_eigen_desc(&symmetrized(&qc));
        let mut null = vecs.columns(0, l * l - rank).into_owned();
        fix_column_signs(&mut null);
        Ok(ConventionalTpsBasis { l, centers, null })
    }

    pub fn lattice_size(&self) -> usize {
        self.l
    }

    /// `L^2 + 3`, the size of the family before the natural constraint.
    pub fn nominal_count(&self) -> usize {
        self.l * self.l + 3
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    /// The unconstrained family `[1, x1, x2, phi(s - c_1), ..., phi(s - c_{L^2})]`.
    pub fn evaluate_nominal(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let poly = polynomial_rows(sites);
        let kern = kernel_matrix(sites, &self.centers)?;
        let mut out = DMatrix::zeros(sites.nrows(), self.nominal_count());
        out.columns_mut(0, 3).copy_from(&poly);
        out.columns_mut(3, kern.ncols()).copy_from(&kern);
        Ok(out)
    }
}

impl SpatialBasis for ConventionalTpsBasis {
    fn len(&self) -> usize {
        3 + self.null.ncols()
    }

    fn dim(&self) -> usize {
        2
    }

    fn evaluate(&self, sites: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sites.ncols() != 2 {
            return Err(Error::Shape(format!("sites have {} columns, basis is 2-dimensional", sites.ncols())));
        }
        let poly = polynomial_rows(sites);
        let kern = kernel_matrix(sites, &self.centers)? * &self.null;
        let mut out = DMatrix::zeros(sites.nrows(), self.len());
        out.columns_mut(0, 3).copy_from(&poly);
        out.columns_mut(3, kern.ncols()).copy_from(&kern);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    /// `m` equispaced nodes including the endpoints, trapezoid weights.
    Trapezoid,
    /// `m` cell midpoints, weight `1/m`.
    Midpoint,
    /// `m` equispaced nodes including the endpoints, equal weights `1/m`.
    Uniform,
}

impl QuadratureRule {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "trapezoid" => Ok(Self::Trapezoid),
            "midpoint" => Ok(Self::Midpoint),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::Unknown { kind: "quadrature rule", name: name.into() }),
        }
    }
}

/// Tensor-product quadrature on `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    points: DMatrix<f64>,
    weights: DVector<f64>,
}

impl QuadratureGrid {
    pub fn tensor(d: usize, m: usize, rule: QuadratureRule) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Dimension(d));
        }
        let min = if rule == QuadratureRule::Midpoint { 1 } else { 2 };
        if m < min {
            return Err(Error::InvalidParameter(format!("quadrature needs at least {min} points per axis")));
        }
        let (nodes, w): (Vec<f64>, Vec<f64>) = match rule {
            QuadratureRule::Trapezoid => (0..m)
                .map(|i| {
                    let h = 1.0 / (m - 1) as f64;
                    let w = if i == 0 || i == m - 1 { h / 2.0 } else { h };
                    (i as f64 * h, w)
                })
                .unzip(),
            QuadratureRule::Midpoint => (0..m).map(|i| ((i as f64 + 0.5) / m as f64, 1.0 / m as f64)).unzip(),
            QuadratureRule::Uniform => (0..m).map(|i| (i as f64 / (m - 1) as f64, 1.0 / m as f64)).unzip(),
        };
        let total = m.pow(d as u32);
        let digit = |i: usize, j: usize| (i / m.pow(j as u32)) % m;
        let points = DMatrix::from_fn(total, d, |i, j| nodes[digit(i, j)]);
        let weights = DVector::from_fn(total, |i, _| (0..d).map(|j| w[digit(i, j)]).product());
        Ok(QuadratureGrid { points, weights })
    }

    /// Trapezoid rule with 201 nodes in one dimension and 41 per axis otherwise.
    pub fn default_for(d: usize) -> Result<Self> {
        Self::tensor(d, if d == 1 { 201 } else { 41 }, QuadratureRule::Trapezoid)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// A target covariance tabulated on a quadrature grid, reused across candidate bases.
#[derive(Debug, Clone)]
pub struct IseProblem {
    grid: QuadratureGrid,
    target: DMatrix<f64>,
}

impl IseProblem {
    pub fn new(c0: &ReferenceCovariance, grid: QuadratureGrid) -> Result<Self> {
        let target = c0.matrix(grid.points(), grid.points())?;
        Ok(IseProblem { grid, target })
    }

    /// A target given directly as its values on the grid.
    pub fn from_target(grid: QuadratureGrid, target: DMatrix<f64>) -> Result<Self> {
        if target.shape() != (grid.len(), grid.len()) {
            return Err(Error::Shape("target must be tabulated on the grid".into()));
        }
        Ok(IseProblem { grid, target })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    /// Grid values of a basis.
    pub fn tabulate<B: SpatialBasis + ?Sized>(&self, basis: &B) -> Result<DMatrix<f64>> {
        basis.evaluate(self.grid.points())
    }

    /// `sum_ij w_i w_j ((F M F')_ij - C_ij)^2`, with `F` the basis on the grid.
    pub fn ise(&self, f: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!("M is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if f.nrows() != self.grid.len() || f.ncols() != m.nrows() {
            return Err(Error::Shape(format!(
                "basis values are {}x{} on a grid of {} with a {}x{} M",
                f.nrows(),
                f.ncols(),
                self.grid.len(),
                m.nrows(),
                m.ncols()
            )));
        }
        let approx = f * m * f.transpose();
        let w = &self.grid.weights;
        let mut total = 0.0;
        for j in 0..approx.ncols() {
            let mut col = 0.0;
            for i in 0..approx.nrows() {
                let e = approx[(i, j)] - self.target[(i, j)];
                col += w[i] * e * e;
            }
            total += w[j] * col;
        }
        Ok(total)
    }

    /// The PSD `M` minimizing the discretized ISE for grid values `F`.
    pub fn best_m(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.nrows() != self.grid.len() {
            return Err(Error::Shape("basis values must be tabulated on the grid".into()));
        }
        let w = &self.grid.weights;
        let fw = DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[(i, j)] * w[i]);
        let gram = symmetrized(&(f.transpose() * &fw));
        let root = GramRoot::new(&gram, 1e-12);
        if root.rank() < f.ncols() {
            return Err(Error::CollinearBasis);
        }
        let b = symmetrized(&(fw.transpose() * &self.target * &fw));
        let g_inv_half = root.inverse_sqrt();
        let t = symmetrized(&(&g_inv_half * b * &g_inv_half));
        let (vals, vecs) = sym_eigen_desc(&t);
        let kept = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * vals[j].max(0.0));
        let t_plus = kept * vecs.transpose();
        Ok(symmetrized(&(&g_inv_half * t_plus * &g_inv_half)))
    }

    /// Optimal `M` and its ISE.
    pub fn best(&self, f: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let m = self.best_m(f)?;
        let e = self.ise(f, &m)?;
        Ok((m, e))
    }
}

/// Discretized ISE of `f' M f` against `c0` on `grid`.
pub fn ise(f: &DMatrix<f64>, m: &DMatrix<f64>, c0: &ReferenceCovariance, grid: &QuadratureGrid) -> Result<f64> {
    IseProblem::new(c0, grid.clone())?.ise(f, m)
}

/// PSD minimizer of the discretized ISE.
pub fn best_m_ise(f: &DMatrix<f64>, c0: &ReferenceCovariance, grid: &QuadratureGrid) -> Result<DMatrix<f64>> {
    IseProblem::new(c0, grid.clone())?.best_m(f)
}
