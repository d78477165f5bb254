//! Maximum-likelihood estimation of the spatial random-effects model
//! `z_t ~ N(0, F M F' + (sigma_xi2 + sigma_eps2) I)` with known `sigma_eps2`.
//!
//! With `L = F (F'F)^{-1/2}` and `L' S L = P diag(d) P'`, the likelihood
//! maximizer over PSD `M` for a fixed total noise `s = sigma_xi2 + sigma_eps2`
//! keeps the directions of `P` and soft-thresholds the spectrum,
//! `d_hat = max(d - s, 0)`. What remains is a scalar profile in `s`:
//!
//! ```text
//! tr(S)/s + sum_k { log(d_hat_k + s) - d_k d_hat_k / ((d_hat_k + s) s) } + (n - K) log s
//! ```
//!
//! Between consecutive `d_k` the number of untruncated terms is constant and
//! the profile reduces to `A/s + (n - m) log s + const`, so its global
//! minimum is found exactly by checking one stationary point per piece.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{from_row_major, row_major, BasisRecord, MrtsBasis, SpatialBasis};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen_desc, GramRoot};
use crate::locations::{fmt_f64, row_key, LocationSet};
use crate::tps::TpsSystem;

/// Observations `Z` (`n x T`, column `t` is `z_t`) at a location set.
#[derive(Debug, Clone)]
pub struct DataPanel {
    locs: LocationSet,
    z: DMatrix<f64>,
    moment: DMatrix<f64>,
}

/// `S = (1/T) sum_t z_t z_t'`, the second moment about zero.
pub fn sample_moment(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() == 0 || z.nrows() == 0 {
        return Err(Error::EmptyPanel);
    }
    let s = z * z.transpose() / z.ncols() as f64;
    Ok((&s + s.transpose()) * 0.5)
}

impl DataPanel {
    pub fn new(locs: LocationSet, z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != locs.n() {
            return Err(Error::Shape(format!("panel has {} rows for {} sites", z.nrows(), locs.n())));
        }
        let moment = sample_moment(&z)?;
        Ok(DataPanel { locs, z, moment })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locs
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn replicates(&self) -> usize {
        self.z.ncols()
    }

    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.moment
    }

    /// Subtracts a known mean surface evaluated at the sites: `n x 1` (shared by all `t`) or `n x T`.
    pub fn subtract_mean(&self, mean: &DMatrix<f64>) -> Result<Self> {
        let (n, t) = self.z.shape();
        let z = match mean.shape() {
            (r, 1) if r == n => DMatrix::from_fn(n, t, |i, j| self.z[(i, j)] - mean[(i, 0)]),
            (r, c) if r == n && c == t => &self.z - mean,
            (r, c) => return Err(Error::Shape(format!("mean surface is {r}x{c}, panel is {n}x{t}"))),
        };
        DataPanel::new(self.locs.clone(), z)
    }

    /// Reads long-format rows `site_id,t,value`; `site_id` is the 0-based row of the location file.
    ///
    /// Replicates are ordered by increasing `t`; every site must be observed at every `t`.
    pub fn from_csv_reader<R: Read>(locs: LocationSet, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse(format!("panel file lacks a `{name}` column")))
        };
        let (ci, ct, cv) = (col("site_id")?, col("t")?, col("value")?);
        let mut entries: Vec<(usize, i64, f64)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse_err = |what: &str| Error::Parse(format!("line {}: bad {what}", line + 2));
            let site: usize = rec.get(ci).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err("site_id"))?;
            let t: i64 = rec.get(ct).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err("t"))?;
            let v: f64 = rec.get(cv).and_then(|v| v.parse().ok()).ok_or_else(|| parse_err("value"))?;
            if site >= locs.n() {
                return Err(Error::Parse(format!("site_id {site} out of range for {} sites", locs.n())));
            }
            entries.push((site, t, v));
        }
        let mut times: Vec<i64> = entries.iter().map(|e| e.1).collect();
        times.sort_unstable();
        times.dedup();
        let n = locs.n();
        let mut z = DMatrix::from_element(n, times.len(), f64::NAN);
        for (site, t, v) in entries {
            let j = times.binary_search(&t).expect("time collected above");
            if !z[(site, j)].is_nan() {
                return Err(Error::Parse(format!("site {site} observed twice at t = {t}")));
            }
            z[(site, j)] = v;
        }
        if let Some(pos) = z.iter().position(|v| v.is_nan()) {
            return Err(Error::Parse(format!(
                "panel is incomplete: site {} missing at t = {}",
                pos % n,
                times[pos / n]
            )));
        }
        DataPanel::new(locs, z)
    }

    pub fn read_csv(locs: LocationSet, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(locs, std::fs::File::open(path)?)
    }

    /// Writes long-format rows with `t` running from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["site_id", "t", "value"])?;
        for t in 0..self.z.ncols() {
            for i in 0..self.z.nrows() {
                wtr.write_record([i.to_string(), (t + 1).to_string(), fmt_f64(self.z[(i, t)])])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The spectral quantities entering the profile likelihood.
#[derive(Debug, Clone)]
pub struct ProfileInput {
    /// Eigenvalues of `L'SL`, descending.
    pub d: Vec<f64>,
    pub trace_s: f64,
    pub n: usize,
}

/// Minimizer of the profile over `sigma_xi2 >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptimum {
    pub sigma_xi2: f64,
    /// Profile value; `-inf` when the data lie exactly in the model space and `sigma_eps2 = 0`.
    pub value: f64,
}

/// Profile negative log-likelihood (twice, per replicate, without `n log 2 pi`).
pub fn profile_negloglik(sigma_xi2: f64, input: &ProfileInput, sigma_eps2: f64) -> Result<f64> {
    if sigma_xi2 < 0.0 || sigma_eps2 < 0.0 {
        return Err(Error::InvalidParameter("variances must be nonnegative".into()));
    }
    let s = sigma_xi2 + sigma_eps2;
    if s <= 0.0 {
        return Err(Error::SingularProfile);
    }
    let k = input.d.len();
    let mut value = input.trace_s / s + (input.n - k) as f64 * s.ln();
    for &dk in &input.d {
        let dh = (dk - s).max(0.0);
        value += (dh + s).ln() - dk * dh / ((dh + s) * s);
    }
    Ok(value)
}

impl ProfileInput {
    pub fn k(&self) -> usize {
        self.d.len()
    }

    /// Exact global minimizer over `s = sigma_xi2 + sigma_eps2 >= sigma_eps2`.
    pub fn minimize(&self, sigma_eps2: f64) -> Result<ProfileOptimum> {
        if sigma_eps2 < 0.0 {
            return Err(Error::InvalidParameter("sigma_eps2 must be nonnegative".into()));
        }
        let (n, k) = (self.n, self.d.len());
        let negligible = 1e-12 * self.trace_s.abs().max(f64::MIN_POSITIVE);
        let lo = sigma_eps2;

        let mut head_sum = 0.0;
        let mut head_log = 0.0;
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |s: f64, value: f64| {
            let better = match best {
                None => true,
                Some((bs, bv)) => value < bv || (value == bv && s < bs),
            };
            if better {
                best = Some((s, value));
            }
        };

        for m in 0..=k {
            // piece where exactly the first m eigenvalues exceed s
            let upper = if m == 0 { f64::INFINITY } else { self.d[m - 1] };
            let lower = if m == k { 0.0 } else { self.d[m].max(0.0) };
            if m > 0 {
                head_sum += self.d[m - 1];
                head_log += self.d[m - 1].ln() + 1.0;
            }
            let a = lower.max(lo);
            let b = upper;
            if a > b {
                continue;
            }
            let mut area = self.trace_s - head_sum;
            if area <= negligible {
                area = 0.0;
            }
            let free = (n - m) as f64;
            let piece = |s: f64| -> f64 {
                if s == 0.0 {
                    return match (area == 0.0, free == 0.0) {
                        (true, true) => head_log,
                        (true, false) => f64::NEG_INFINITY,
                        _ => f64::INFINITY,
                    };
                }
                area / s + head_log + if free == 0.0 { 0.0 } else { free * s.ln() }
            };
            let s = if area > 0.0 && free > 0.0 {
                (area / free).clamp(a, b)
            } else if area > 0.0 {
                // decreasing on the piece
                b
            } else {
                a
            };
            if s.is_finite() {
                consider(s, piece(s));
            }
        }
        let (s, value) = best.ok_or(Error::SingularProfile)?;
        Ok(ProfileOptimum { sigma_xi2: (s - sigma_eps2).max(0.0), value })
    }
}

/// How to treat a basis matrix whose columns are numerically dependent at the sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankPolicy {
    /// Fail with [`Error::RankDeficient`].
    #[default]
    Strict,
    /// Fit on the numerical column space of `F`, with `(F'F)^{-1/2}` replaced by its pseudo-inverse.
    Truncate,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub rank_policy: RankPolicy,
    /// Eigenvalues of `F'F` below `gram_floor * max` count as zero.
    pub gram_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { rank_policy: RankPolicy::Strict, gram_floor: 1e-12 }
    }
}

/// Eigen-factors of `L'SL`.
#[derive(Debug, Clone)]
pub struct Spectra {
    /// `r x r` orthogonal
    pub p: DMatrix<f64>,
    /// descending
    pub d: Vec<f64>,
    /// `max(d - sigma_xi2 - sigma_eps2, 0)`
    pub d_hat: Vec<f64>,
}

/// A fitted spatial random-effects model.
#[derive(Debug, Clone)]
pub struct SreFit<B> {
    basis: B,
    locs: LocationSet,
    n: usize,
    replicates: usize,
    rank: usize,
    design: DMatrix<f64>,
    /// `F U_r diag(g^{-1/2})`, orthonormal columns
    l_factor: DMatrix<f64>,
    m_hat: DMatrix<f64>,
    sigma_xi2: f64,
    sigma_eps2: f64,
    spectra: Spectra,
    trace_s: f64,
    negloglik: f64,
    aic: f64,
}

/// `K^2 + K + 2`
pub fn aic_penalty(k: usize) -> f64 {
    (k * k + k + 2) as f64
}

/// Closed-form ML fit of `M` and `sigma_xi2` for a given basis.
pub fn fit_ml<B: SpatialBasis>(panel: &DataPanel, basis: B, sigma_eps2: f64) -> Result<SreFit<B>> {
    fit_ml_with(panel, basis, sigma_eps2, &FitOptions::default())
}

pub fn fit_ml_with<B: SpatialBasis>(
    panel: &DataPanel,
    basis: B,
    sigma_eps2: f64,
    opts: &FitOptions,
) -> Result<SreFit<B>> {
    let design = basis.design(panel.locations())?;
    let core = FitCore::new(&design, panel.second_moment(), opts)?;
    let profile = core.profile_input(panel.second_moment().trace(), panel.n());
    let opt = profile.minimize(sigma_eps2)?;
    Ok(core.assemble(basis, panel.locations().clone(), design, profile, opt, sigma_eps2, panel.replicates()))
}

/// The `sigma`-independent part of a fit.
struct FitCore {
    l_factor: DMatrix<f64>,
    coef_map: DMatrix<f64>,
    p: DMatrix<f64>,
    d: Vec<f64>,
}

impl FitCore {
    fn new(design: &DMatrix<f64>, moment: &DMatrix<f64>, opts: &FitOptions) -> Result<Self> {
        let k = design.ncols();
        if design.nrows() != moment.nrows() {
            return Err(Error::Shape(format!("basis has {} rows for {} sites", design.nrows(), moment.nrows())));
        }
        let gram = design.transpose() * design;
        let root = GramRoot::new(&gram, opts.gram_floor);
        if root.rank() < k && opts.rank_policy == RankPolicy::Strict {
            return Err(Error::RankDeficient { rank: root.rank(), k });
        }
        if root.rank() == 0 {
            return Err(Error::RankDeficient { rank: 0, k });
        }
        let coef_map = root.scaled_inverse_root();
        let l_factor = design * &coef_map;
        let inner = l_factor.transpose() * moment * &l_factor;
        let (d, p) = sym_eigen_desc(&inner);
        Ok(FitCore { l_factor, coef_map, p, d })
    }

    fn profile_input(&self, trace_s: f64, n: usize) -> ProfileInput {
        ProfileInput { d: self.d.clone(), trace_s, n }
    }

    fn assemble<B>(
        self,
        basis: B,
        locs: LocationSet,
        design: DMatrix<f64>,
        profile: ProfileInput,
        opt: ProfileOptimum,
        sigma_eps2: f64,
        replicates: usize,
    ) -> SreFit<B> {
        let s = opt.sigma_xi2 + sigma_eps2;
        let d_hat: Vec<f64> = self.d.iter().map(|&dk| (dk - s).max(0.0)).collect();
        let w = &self.coef_map * &self.p;
        let scaled = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] * d_hat[j]);
        let m = &scaled * w.transpose();
        let m_hat = (&m + m.transpose()) * 0.5;
        let k = design.ncols();
        let negloglik = opt.value;
        SreFit {
            basis,
            locs,
            n: profile.n,
            replicates,
            rank: self.d.len(),
            design,
            l_factor: self.l_factor,
            m_hat,
            sigma_xi2: opt.sigma_xi2,
            sigma_eps2,
            spectra: Spectra { p: self.p, d: self.d, d_hat },
            trace_s: profile.trace_s,
            negloglik,
            aic: replicates as f64 * negloglik + aic_penalty(k),
        }
    }
}

impl<B: SpatialBasis> SreFit<B> {
    /// A model with given parameters instead of estimated ones, e.g. the true
    /// covariance in a simulation. `negloglik` and `aic` are evaluated at the
    /// given parameters.
    pub fn with_parameters(
        panel: &DataPanel,
        basis: B,
        m: &DMatrix<f64>,
        sigma_xi2: f64,
        sigma_eps2: f64,
        opts: &FitOptions,
    ) -> Result<Self> {
        if sigma_xi2 < 0.0 || sigma_eps2 < 0.0 {
            return Err(Error::InvalidParameter("variances must be nonnegative".into()));
        }
        let k = basis.len();
        if m.shape() != (k, k) {
            return Err(Error::Shape(format!("M is {}x{}, basis has {k} functions", m.nrows(), m.ncols())));
        }
        let design = basis.design(panel.locations())?;
        let gram = design.transpose() * &design;
        let root = GramRoot::new(&gram, opts.gram_floor);
        if root.rank() < k && opts.rank_policy == RankPolicy::Strict {
            return Err(Error::RankDeficient { rank: root.rank(), k });
        }
        let coef_map = root.scaled_inverse_root();
        let l_factor = &design * &coef_map;
        // F M F' = L A L' with A = g^{1/2} U' M U g^{1/2}
        let half = DMatrix::from_fn(root.vectors.ncols(), k, |i, j| root.vectors[(j, i)] * root.values[i].sqrt());
        let a = &half * m * half.transpose();
        let (d_hat, p) = sym_eigen_desc(&((&a + a.transpose()) * 0.5));
        let d_hat: Vec<f64> = d_hat.into_iter().map(|v| v.max(0.0)).collect();
        let s = sigma_xi2 + sigma_eps2;
        let d: Vec<f64> = d_hat.iter().map(|v| v + s).collect();
        let r = &l_factor * &p;
        let n = panel.n();
        let trace_s = panel.second_moment().trace();
        let negloglik = if s > 0.0 {
            let rsr = r.transpose() * panel.second_moment() * &r;
            let mut logdet = (n - d.len()) as f64 * s.ln();
            let mut explained = 0.0;
            for (kk, &dh) in d_hat.iter().enumerate() {
                logdet += (dh + s).ln();
                explained += dh / (dh + s) * rsr[(kk, kk)];
            }
            logdet + (trace_s - explained) / s
        } else {
            f64::NAN
        };
        let replicates = panel.replicates();
        Ok(SreFit {
            basis,
            locs: panel.locations().clone(),
            n,
            replicates,
            rank: d.len(),
            design,
            l_factor,
            m_hat: (m + m.transpose()) * 0.5,
            sigma_xi2,
            sigma_eps2,
            spectra: Spectra { p, d, d_hat },
            trace_s,
            negloglik,
            aic: replicates as f64 * negloglik + aic_penalty(k),
        })
    }

    pub fn basis(&self) -> &B {
        &self.basis
    }

    /// The data sites the model was fitted at.
    pub fn locations(&self) -> &LocationSet {
        &self.locs
    }

    /// Number of basis functions `K`.
    pub fn k(&self) -> usize {
        self.design.ncols()
    }

    /// Numerical rank of the basis at the sites (`K` unless fitted with [`RankPolicy::Truncate`]).
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn m_hat(&self) -> &DMatrix<f64> {
        &self.m_hat
    }

    pub fn sigma_xi2(&self) -> f64 {
        self.sigma_xi2
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_eps2
    }

    /// `sigma_xi2 + sigma_eps2`
    pub fn total_noise(&self) -> f64 {
        self.sigma_xi2 + self.sigma_eps2
    }

    pub fn spectra(&self) -> &Spectra {
        &self.spectra
    }

    pub fn trace_s(&self) -> f64 {
        self.trace_s
    }

    /// Twice the negative log-likelihood per replicate, omitting `n log(2 pi)`.
    pub fn negloglik(&self) -> f64 {
        self.negloglik
    }

    /// `T * negloglik + K^2 + K + 2`
    pub fn aic(&self) -> f64 {
        self.aic
    }

    /// The basis evaluated at the data sites, `n x K`.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// `F (F'F)^{-1/2}` restricted to the column space of `F`, `n x r`.
    pub fn l_factor(&self) -> &DMatrix<f64> {
        &self.l_factor
    }

    /// The profile inputs of this fit.
    pub fn profile_input(&self) -> ProfileInput {
        ProfileInput { d: self.spectra.d.clone(), trace_s: self.trace_s, n: self.n }
    }

    /// `C(s, s*) = f(s)' M f(s*) + sigma_xi2 I(s = s*)`.
    pub fn covariance(&self, s: &[f64], s_star: &[f64]) -> Result<f64> {
        let d = self.basis.dim();
        if s.len() != d || s_star.len() != d {
            return Err(Error::Shape(format!("points must have {d} coordinates")));
        }
        let sites = DMatrix::from_fn(2, d, |i, j| if i == 0 { s[j] } else { s_star[j] });
        let f = self.basis.evaluate(&sites)?;
        let fa = f.row(0).transpose();
        let fb = f.row(1).transpose();
        let nugget = if row_key(s.iter().copied()) == row_key(s_star.iter().copied()) { self.sigma_xi2 } else { 0.0 };
        Ok(fa.dot(&(&self.m_hat * fb)) + nugget)
    }

    /// Cross-covariance matrix between two site sets, nugget applied on exact coordinate matches.
    pub fn covariance_matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let fa = self.basis.evaluate(a)?;
        let fb = self.basis.evaluate(b)?;
        let mut c = &fa * &self.m_hat * fb.transpose();
        if self.sigma_xi2 > 0.0 {
            let keys: std::collections::HashMap<Vec<u64>, usize> =
                b.row_iter().enumerate().map(|(j, r)| (row_key(r.iter().copied()), j)).collect();
            for (i, r) in a.row_iter().enumerate() {
                if let Some(&j) = keys.get(&row_key(r.iter().copied())) {
                    c[(i, j)] += self.sigma_xi2;
                }
            }
        }
        Ok(c)
    }

    /// `Sigma_hat = F M F' + (sigma_xi2 + sigma_eps2) I` as a dense `n x n` matrix.
    pub fn sigma_hat(&self) -> DMatrix<f64> {
        let mut s = &self.design * &self.m_hat * self.design.transpose();
        for i in 0..self.n {
            s[(i, i)] += self.total_noise();
        }
        s
    }
}

/// One row of an AIC trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AicEntry {
    pub k: usize,
    #[serde(with = "nonfinite")]
    pub aic: f64,
    #[serde(with = "nonfinite")]
    pub negloglik: f64,
    pub sigma_xi2: f64,
}

/// Result of AIC selection over a range of basis counts.
#[derive(Debug, Clone)]
pub struct Selection {
    pub best: SreFit<MrtsBasis>,
    pub trace: Vec<AicEntry>,
}

/// Builds the basis once at `k_max` and returns the AIC-minimizing fit over `[k_min, k_max]`.
pub fn select_k(panel: &DataPanel, system: &TpsSystem, k_min: usize, k_max: usize, sigma_eps2: f64) -> Result<Selection> {
    if k_min > k_max {
        return Err(Error::InvalidParameter(format!("empty K range [{k_min}, {k_max}]")));
    }
    let basis = MrtsBasis::compute(system, k_max)?;
    select_k_with_basis(panel, &basis, k_min, k_max, sigma_eps2)
}

/// AIC selection reusing the leading columns of an existing basis.
pub fn select_k_with_basis(
    panel: &DataPanel,
    basis: &MrtsBasis,
    k_min: usize,
    k_max: usize,
    sigma_eps2: f64,
) -> Result<Selection> {
    select_k_with(panel, basis, k_min, k_max, sigma_eps2, &FitOptions::default())
}

pub fn select_k_with(
    panel: &DataPanel,
    basis: &MrtsBasis,
    k_min: usize,
    k_max: usize,
    sigma_eps2: f64,
    opts: &FitOptions,
) -> Result<Selection> {
    let d = basis.locations().dim();
    if k_min > k_max {
        return Err(Error::InvalidParameter(format!("empty K range [{k_min}, {k_max}]")));
    }
    if k_min < d + 1 || k_max > basis.k() {
        return Err(Error::BasisRange { k: if k_min < d + 1 { k_min } else { k_max }, min: d + 1, max: basis.k() });
    }
    let fits: Vec<SreFit<MrtsBasis>> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| fit_ml_with(panel, basis.truncated(k)?, sigma_eps2, opts))
        .collect::<Result<_>>()?;
    let trace = fits
        .iter()
        .map(|f| AicEntry { k: f.k(), aic: f.aic(), negloglik: f.negloglik(), sigma_xi2: f.sigma_xi2() })
        .collect();
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.aic() < fits[best].aic() {
            best = i;
        }
    }
    let best = fits.into_iter().nth(best).expect("range is nonempty");
    Ok(Selection { best, trace })
}

pub const FIT_FORMAT: &str = "sre-fit";
pub const FIT_VERSION: u32 = 1;

/// JSON form of a fit; the basis is stored separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub rank: usize,
    pub n: usize,
    pub replicates: usize,
    pub sigma_eps2: f64,
    pub sigma_xi2: f64,
    /// row-major `K x K`
    pub m_hat: Vec<f64>,
    pub d: Vec<f64>,
    pub d_hat: Vec<f64>,
    /// row-major `r x r`
    pub p: Vec<f64>,
    pub trace_s: f64,
    #[serde(with = "nonfinite")]
    pub negloglik: f64,
    #[serde(with = "nonfinite")]
    pub aic: f64,
    pub negloglik_note: String,
    #[serde(default)]
    pub aic_trace: Vec<AicEntry>,
}

impl<B: SpatialBasis> SreFit<B> {
    pub fn to_record(&self) -> FitRecord {
        FitRecord {
            format: FIT_FORMAT.into(),
            version: FIT_VERSION,
            k: self.k(),
            rank: self.rank,
            n: self.n,
            replicates: self.replicates,
            sigma_eps2: self.sigma_eps2,
            sigma_xi2: self.sigma_xi2,
            m_hat: row_major(&self.m_hat),
            d: self.spectra.d.clone(),
            d_hat: self.spectra.d_hat.clone(),
            p: row_major(&self.spectra.p),
            trace_s: self.trace_s,
            negloglik: self.negloglik,
            aic: self.aic,
            negloglik_note: "twice the negative log-likelihood per replicate; the constant n*log(2*pi) is omitted".into(),
            aic_trace: Vec::new(),
        }
    }

    /// Rebuilds a fit from its record and the basis it was computed with.
    pub fn from_record(record: &FitRecord, basis: B, locs: &LocationSet) -> Result<Self> {
        if record.format != FIT_FORMAT || record.version != FIT_VERSION {
            return Err(Error::Parse(format!("unsupported fit container {} v{}", record.format, record.version)));
        }
        if basis.len() != record.k || locs.n() != record.n {
            return Err(Error::Shape("fit record does not match basis or locations".into()));
        }
        let design = basis.design(locs)?;
        let opts = FitOptions {
            rank_policy: if record.rank < record.k { RankPolicy::Truncate } else { RankPolicy::Strict },
            ..Default::default()
        };
        let gram = design.transpose() * &design;
        let root = GramRoot::new(&gram, opts.gram_floor);
        if root.rank() != record.rank {
            return Err(Error::Shape(format!("basis rank {} differs from recorded rank {}", root.rank(), record.rank)));
        }
        let coef_map = root.scaled_inverse_root();
        let l_factor = &design * &coef_map;
        Ok(SreFit {
            basis,
            locs: locs.clone(),
            n: record.n,
            replicates: record.replicates,
            rank: record.rank,
            design,
            l_factor,
            m_hat: from_row_major(record.k, record.k, &record.m_hat)?,
            sigma_xi2: record.sigma_xi2,
            sigma_eps2: record.sigma_eps2,
            spectra: Spectra {
                p: from_row_major(record.rank, record.rank, &record.p)?,
                d: record.d.clone(),
                d_hat: record.d_hat.clone(),
            },
            trace_s: record.trace_s,
            negloglik: record.negloglik,
            aic: record.aic,
        })
    }
}

/// A fitted model together with its basis, as written by the command-line tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub fit: FitRecord,
    pub basis: BasisRecord,
}

impl SreFit<MrtsBasis> {
    pub fn to_document(&self, aic_trace: Vec<AicEntry>) -> ModelDocument {
        let mut fit = self.to_record();
        fit.aic_trace = aic_trace;
        ModelDocument { fit, basis: self.basis.to_record() }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let basis = MrtsBasis::try_from(doc.basis.clone())?;
        let locs = basis.locations().clone();
        Self::from_record(&doc.fit, basis, &locs)
    }
}

/// Serializes non-finite floats as `null`, read back as `-inf`.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Dense `T log|Sigma| + T tr(S Sigma^{-1})` for a PSD-plus-noise covariance.
pub fn dense_scaled_negloglik(sigma: &DMatrix<f64>, moment: &DMatrix<f64>, replicates: usize) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(sigma.clone())?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv_s = chol.solve(moment);
    Some(replicates as f64 * (logdet + inv_s.trace()))
}
