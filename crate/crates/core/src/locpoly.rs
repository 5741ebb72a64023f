//! One-sided local polynomial fits and regression discontinuity estimates.
//!
//! Each side of the cutoff is fitted separately by weighted least squares in
//! the basis `p(|x|/h) = (1, |x|/h, ..., (|x|/h)^r)` with weights `k*(x/h)`.
//! Observations at the cutoff belong to the upper side. Standard errors come
//! from one of four estimators of the conditional variance: regression
//! residuals (EHW), nearest-neighbour differences (NN, `J = 3`), a plug-in
//! based on `∫k²` and a density estimate, or a caller-supplied oracle.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{normalized_boundary_kernel, KernelError, KernelSpec};

/// Number of neighbours used by the NN variance estimator.
pub const NN_NEIGHBOURS: usize = 3;
/// Largest Gram condition number accepted by [`fit_one_side`].
pub const MAX_CONDITION: f64 = 1e12;
/// Smallest first-stage jump accepted by [`rd_fuzzy`].
pub const MIN_FIRST_STAGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocPolyError {
    #[error("{side} side at h = {h}: {n_eff} observations with positive weight, need {needed}")]
    InsufficientData { side: Side, h: f64, n_eff: usize, needed: usize },
    #[error("{side} side at h = {h}: Gram matrix condition number {cond:e} exceeds limit")]
    IllConditioned { side: Side, h: f64, cond: f64 },
    #[error("first-stage jump {delta:e} is too small")]
    WeakFirstStage { delta: f64 },
    #[error("{side} side has {count} observations, nearest-neighbour variance needs {needed}")]
    InsufficientNeighbors { side: Side, count: usize, needed: usize },
    #[error("exact variance requires a conditional-variance oracle for this estimator")]
    MissingOracle,
    #[error("fuzzy design requires a treatment column")]
    MissingTreatment,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Upper,
    Lower,
}

impl Side {
    pub fn contains(self, x: f64) -> bool {
        match self {
            Side::Upper => x >= 0.0,
            Side::Lower => x < 0.0,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Upper => "upper",
            Side::Lower => "lower",
        })
    }
}

/// One observation: running variable (cutoff at zero), outcome, and treatment
/// for fuzzy designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDSample {
    pub x: f64,
    pub y: f64,
    pub d: Option<f64>,
}

/// Nearest-neighbour means of `y` (and `d`) for every observation, computed
/// within its own side of the cutoff over the whole sample.
#[derive(Debug)]
struct NnMeans {
    y: Vec<f64>,
    d: Option<Vec<f64>>,
    side_counts: [usize; 2],
}

/// A regression discontinuity sample in column form.
#[derive(Debug)]
pub struct RDData {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Option<Vec<f64>>,
    nn: OnceLock<NnMeans>,
}

impl Clone for RDData {
    fn clone(&self) -> Self {
        RDData { x: self.x.clone(), y: self.y.clone(), d: self.d.clone(), nn: OnceLock::new() }
    }
}

impl RDData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: Option<Vec<f64>>) -> Result<Self, LocPolyError> {
        if x.len() != y.len() || d.as_ref().is_some_and(|d| d.len() != x.len()) {
            return Err(LocPolyError::InvalidData("columns differ in length".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|a| a.is_finite());
        if !finite(&x) || !finite(&y) || d.as_deref().is_some_and(|d| !finite(d)) {
            return Err(LocPolyError::InvalidData("non-finite value".into()));
        }
        Ok(RDData { x, y, d, nn: OnceLock::new() })
    }

    pub fn from_samples(rows: &[RDSample]) -> Result<Self, LocPolyError> {
        let has_d = rows.first().is_some_and(|r| r.d.is_some());
        if rows.iter().any(|r| r.d.is_some() != has_d) {
            return Err(LocPolyError::InvalidData("treatment present on some rows only".into()));
        }
        let d = has_d.then(|| rows.iter().map(|r| r.d.unwrap()).collect());
        RDData::new(rows.iter().map(|r| r.x).collect(), rows.iter().map(|r| r.y).collect(), d)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> Option<&[f64]> {
        self.d.as_deref()
    }

    fn nn_means(&self) -> &NnMeans {
        self.nn.get_or_init(|| {
            let mut y = vec![f64::NAN; self.len()];
            let mut d = self.d.as_ref().map(|_| vec![f64::NAN; self.len()]);
            let mut side_counts = [0; 2];
            for (s, side) in [Side::Upper, Side::Lower].into_iter().enumerate() {
                let mut idx: Vec<usize> = (0..self.len()).filter(|&i| side.contains(self.x[i])).collect();
                side_counts[s] = idx.len();
                if idx.len() <= NN_NEIGHBOURS {
                    continue;
                }
                idx.sort_by(|&a, &b| self.x[a].total_cmp(&self.x[b]).then(a.cmp(&b)));
                for pos in 0..idx.len() {
                    let nbrs = nearest_neighbours(&self.x, &idx, pos, NN_NEIGHBOURS);
                    let mean = |v: &[f64]| nbrs.iter().map(|&j| v[j]).sum::<f64>() / NN_NEIGHBOURS as f64;
                    y[idx[pos]] = mean(&self.y);
                    if let (Some(out), Some(src)) = (d.as_mut(), self.d.as_ref()) {
                        out[idx[pos]] = mean(src);
                    }
                }
            }
            NnMeans { y, d, side_counts }
        })
    }
}

/// The `j` nearest neighbours of `sorted[pos]` among `sorted` (indices into
/// `x`, ordered by `(x, index)`), excluding itself. Ties in distance go to the
/// smaller index.
fn nearest_neighbours(x: &[f64], sorted: &[usize], pos: usize, j: usize) -> Vec<usize> {
    let xi = x[sorted[pos]];
    let mut left = pos;
    let mut right = pos + 1;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(j + 4);
    loop {
        let dl = (left > 0).then(|| xi - x[sorted[left - 1]]);
        let dr = (right < sorted.len()).then(|| x[sorted[right]] - xi);
        let next = match (dl, dr) {
            (None, None) => break,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (Some(a), Some(b)) => a.min(b),
        };
        // candidates arrive in nondecreasing distance; keep going through ties
        if cand.len() >= j && next > cand[cand.len() - 1].0 {
            break;
        }
        if dl == Some(next) {
            left -= 1;
            cand.push((next, sorted[left]));
        } else {
            cand.push((next, sorted[right]));
            right += 1;
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(j).map(|c| c.1).collect()
}

/// A one-sided weighted polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LocPolyFit {
    pub side: Side,
    pub h: f64,
    pub r: usize,
    /// Coefficients in the basis `p(|x|/h)`; `beta[0]` is the boundary intercept.
    pub beta: Vec<f64>,
    /// `Σ wᵢ p(|xᵢ|/h) p(|xᵢ|/h)'` over the side.
    pub gram: DMatrix<f64>,
    /// `yᵢ − p(|xᵢ|/h)'β` for each observation in `indices`.
    pub residuals: Vec<f64>,
    /// Number of observations with positive weight.
    pub n_eff: usize,
    /// Sample positions of the positive-weight observations.
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    /// Rows `p(|xᵢ|/h)'` for the observations in `indices`.
    pub design: DMatrix<f64>,
}

impl LocPolyFit {
    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    /// `wᵢ e₁'Γ⁻¹p(|xᵢ|/h)`: the weight of observation `i` in the intercept.
    fn intercept_weights(&self) -> Vec<f64> {
        let dim = self.r + 1;
        let mut e1 = DVector::zeros(dim);
        e1[0] = 1.0;
        let g = self.gram.clone().lu().solve(&e1).expect("Gram matrix was checked to be well conditioned");
        (0..self.n_eff).map(|i| self.weights[i] * (0..dim).map(|j| self.design[(i, j)] * g[j]).sum::<f64>()).collect()
    }
}

fn fit_outcome(
    x: &[f64],
    outcome: &[f64],
    side: Side,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
) -> Result<LocPolyFit, LocPolyError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(LocPolyError::InvalidData(format!("bandwidth must be positive, got {h}")));
    }
    let dim = r + 1;
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for (i, &xi) in x.iter().enumerate() {
        if side.contains(xi) {
            let w = kstar.eval(xi / h);
            if w > 0.0 {
                indices.push(i);
                weights.push(w);
            }
        }
    }
    let n_eff = indices.len();
    if n_eff < r + 2 {
        return Err(LocPolyError::InsufficientData { side, h, n_eff, needed: r + 2 });
    }
    let design = DMatrix::from_fn(n_eff, dim, |i, j| (x[indices[i]].abs() / h).powi(j as i32));
    let mut gram = DMatrix::zeros(dim, dim);
    for i in 0..n_eff {
        for a in 0..dim {
            for b in 0..dim {
                gram[(a, b)] += weights[i] * design[(i, a)] * design[(i, b)];
            }
        }
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(LocPolyError::IllConditioned { side, h, cond });
    }
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(n_eff, dim, |i, j| sqrt_w[i] * design[(i, j)]);
    let b = DVector::from_fn(n_eff, |i, _| sqrt_w[i] * outcome[indices[i]]);
    let qr = a.col_piv_qr();
    let qtb = qr.q().transpose() * b;
    let mut beta = qr.r().solve_upper_triangular(&qtb).ok_or(LocPolyError::IllConditioned { side, h, cond })?;
    qr.p().inv_permute_rows(&mut beta);
    let residuals =
        (0..n_eff).map(|i| outcome[indices[i]] - (0..dim).map(|j| design[(i, j)] * beta[j]).sum::<f64>()).collect();
    Ok(LocPolyFit {
        side,
        h,
        r,
        beta: beta.iter().copied().collect(),
        gram,
        residuals,
        n_eff,
        indices,
        weights,
        design,
    })
}

/// Weighted order-`r` polynomial fit of `y` on one side of the cutoff.
pub fn fit_one_side(
    data: &RDData,
    side: Side,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
) -> Result<LocPolyFit, LocPolyError> {
    fit_outcome(&data.x, &data.y, side, h, r, kstar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceMethod {
    Ehw,
    Nn,
    Plugin,
    Exact,
}

impl VarianceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMethod::Ehw => "ehw",
            VarianceMethod::Nn => "nn",
            VarianceMethod::Plugin => "plugin",
            VarianceMethod::Exact => "exact",
        }
    }
}

impl std::fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VarianceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ehw" => Ok(VarianceMethod::Ehw),
            "nn" => Ok(VarianceMethod::Nn),
            "plugin" | "plug-in" => Ok(VarianceMethod::Plugin),
            "exact" => Ok(VarianceMethod::Exact),
            _ => Err(format!("variance must be one of ehw, nn, plugin, exact; got `{s}`")),
        }
    }
}

/// Conditional variance `var(Y | X = x)`.
pub type VarianceOracle<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// A variance estimator choice, with the oracle for the exact method.
#[derive(Clone, Copy)]
pub enum Variance<'a> {
    Ehw,
    Nn,
    Plugin,
    Exact(VarianceOracle<'a>),
}

impl Variance<'_> {
    pub fn method(&self) -> VarianceMethod {
        match self {
            Variance::Ehw => VarianceMethod::Ehw,
            Variance::Nn => VarianceMethod::Nn,
            Variance::Plugin => VarianceMethod::Plugin,
            Variance::Exact(_) => VarianceMethod::Exact,
        }
    }
}

impl std::fmt::Debug for Variance<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Variance({})", self.method())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RDEstimate {
    pub theta_hat: f64,
    /// `σ̂(h)/√(nh)`.
    pub se: f64,
    /// `σ̂²(h) = nh·se²`.
    pub sigma_hat_sq: f64,
    pub h: f64,
    pub r: usize,
    pub kernel: String,
    pub variance_method: VarianceMethod,
    pub n_eff_left: usize,
    pub n_eff_right: usize,
}

/// Sampling covariance of the intercepts of one side: `(var Y, cov YD, var D)`.
type SideCov = (f64, f64, f64);

fn side_covariance(
    data: &RDData,
    fy: &LocPolyFit,
    fd: Option<&LocPolyFit>,
    kstar: &KernelSpec,
    var: Variance<'_>,
) -> Result<SideCov, LocPolyError> {
    if let Variance::Plugin = var {
        return plugin_side_covariance(data, fy, fd, kstar);
    }
    let a = fy.intercept_weights();
    let mut out = (0.0, 0.0, 0.0);
    let nn = match var {
        Variance::Nn => {
            let nn = data.nn_means();
            let count = nn.side_counts[if fy.side == Side::Upper { 0 } else { 1 }];
            if count <= NN_NEIGHBOURS {
                return Err(LocPolyError::InsufficientNeighbors { side: fy.side, count, needed: NN_NEIGHBOURS + 1 });
            }
            Some(nn)
        }
        Variance::Exact(_) if fd.is_some() => return Err(LocPolyError::MissingOracle),
        _ => None,
    };
    let scale = NN_NEIGHBOURS as f64 / (NN_NEIGHBOURS as f64 + 1.0);
    for (k, &i) in fy.indices.iter().enumerate() {
        let (ey, ed) = match var {
            Variance::Ehw => (fy.residuals[k], fd.map_or(0.0, |f| f.residuals[k])),
            Variance::Nn => {
                let nn = nn.unwrap();
                let ed = match (fd, &nn.d, &data.d) {
                    (Some(_), Some(md), Some(d)) => d[i] - md[i],
                    _ => 0.0,
                };
                (data.y[i] - nn.y[i], ed)
            }
            Variance::Exact(oracle) => (oracle(data.x[i]).sqrt(), 0.0),
            Variance::Plugin => unreachable!(),
        };
        let (vy, cyd, vd) = match var {
            Variance::Nn => (scale * ey * ey, scale * ey * ed, scale * ed * ed),
            _ => (ey * ey, ey * ed, ed * ed),
        };
        let a2 = a[k] * a[k];
        out.0 += a2 * vy;
        out.1 += a2 * cyd;
        out.2 += a2 * vd;
    }
    Ok(out)
}

/// Plug-in covariance: `∫₀^A k̄² · Σ̂_side / (n h f̂(0))` with `f̂(0)` the share
/// of observations within `A h` of the cutoff over `2 A h`, where `k̄` is the
/// boundary equivalent kernel scaled to integrate to one on `[0, A]`.
fn plugin_side_covariance(
    data: &RDData,
    fy: &LocPolyFit,
    fd: Option<&LocPolyFit>,
    kstar: &KernelSpec,
) -> Result<SideCov, LocPolyError> {
    let kbar = normalized_boundary_kernel(kstar, fy.r)?;
    let i2 = kbar.l2_norm_sq() / 2.0;
    let reach = kstar.support() * fy.h;
    let in_window = data.x.iter().filter(|x| x.abs() <= reach).count();
    let mut sum = (0.0, 0.0, 0.0);
    let mut count = 0usize;
    for (i, &xi) in data.x.iter().enumerate() {
        if fy.side.contains(xi) && xi.abs() <= reach {
            let ey = data.y[i] - fy.intercept();
            let ed = match (fd, &data.d) {
                (Some(f), Some(d)) => d[i] - f.intercept(),
                _ => 0.0,
            };
            sum.0 += ey * ey;
            sum.1 += ey * ed;
            sum.2 += ed * ed;
            count += 1;
        }
    }
    let c = count as f64;
    // var = I₂ σ̂² / (n h f̂), f̂ = in_window / (2 n A h)
    let factor = i2 * 2.0 * kstar.support() / in_window as f64;
    Ok((factor * sum.0 / c, factor * sum.1 / c, factor * sum.2 / c))
}

fn rd_estimate(
    data: &RDData,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
    theta_hat: f64,
    se_sq: f64,
    var: Variance<'_>,
    n_eff: (usize, usize),
) -> RDEstimate {
    RDEstimate {
        theta_hat,
        se: se_sq.max(0.0).sqrt(),
        sigma_hat_sq: se_sq * data.len() as f64 * h,
        h,
        r,
        kernel: kstar.name().to_string(),
        variance_method: var.method(),
        n_eff_left: n_eff.0,
        n_eff_right: n_eff.1,
    }
}

/// Sharp RD estimate `α̂_u − α̂_ℓ` at bandwidth `h`.
pub fn rd_sharp(
    data: &RDData,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
    var: Variance<'_>,
) -> Result<RDEstimate, LocPolyError> {
    let up = fit_one_side(data, Side::Upper, h, r, kstar)?;
    let lo = fit_one_side(data, Side::Lower, h, r, kstar)?;
    let vu = side_covariance(data, &up, None, kstar, var)?.0;
    let vl = side_covariance(data, &lo, None, kstar, var)?.0;
    Ok(rd_estimate(data, h, r, kstar, up.intercept() - lo.intercept(), vu + vl, var, (lo.n_eff, up.n_eff)))
}

/// Fuzzy RD estimate: ratio of the outcome jump to the treatment jump, with a
/// delta-method standard error from the joint sandwich of both fits.
pub fn rd_fuzzy(
    data: &RDData,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
    var: Variance<'_>,
) -> Result<RDEstimate, LocPolyError> {
    let d = data.d.as_ref().ok_or(LocPolyError::MissingTreatment)?;
    let uy = fit_one_side(data, Side::Upper, h, r, kstar)?;
    let ly = fit_one_side(data, Side::Lower, h, r, kstar)?;
    let ud = fit_outcome(&data.x, d, Side::Upper, h, r, kstar)?;
    let ld = fit_outcome(&data.x, d, Side::Lower, h, r, kstar)?;
    let delta_d = ud.intercept() - ld.intercept();
    if delta_d.abs() <= MIN_FIRST_STAGE {
        return Err(LocPolyError::WeakFirstStage { delta: delta_d });
    }
    let theta = (uy.intercept() - ly.intercept()) / delta_d;
    let cu = side_covariance(data, &uy, Some(&ud), kstar, var)?;
    let cl = side_covariance(data, &ly, Some(&ld), kstar, var)?;
    // gradient (1, −θ, −1, θ)/Δ in (α_uY, α_uD, α_ℓY, α_ℓD)
    let quad = |c: SideCov| c.0 - 2.0 * theta * c.1 + theta * theta * c.2;
    let se_sq = (quad(cu) + quad(cl)) / (delta_d * delta_d);
    Ok(rd_estimate(data, h, r, kstar, theta, se_sq, var, (ly.n_eff, uy.n_eff)))
}

/// Sharp (or fuzzy, when `fuzzy` is set) estimates over a bandwidth grid,
/// evaluated in parallel. Output order follows `h_grid`.
pub fn rd_grid(
    data: &RDData,
    h_grid: &[f64],
    r: usize,
    kstar: &KernelSpec,
    var: Variance<'_>,
    fuzzy: bool,
) -> Result<Vec<RDEstimate>, LocPolyError> {
    if matches!(var, Variance::Nn) {
        data.nn_means();
    }
    h_grid
        .par_iter()
        .map(|&h| if fuzzy { rd_fuzzy(data, h, r, kstar, var) } else { rd_sharp(data, h, r, kstar, var) })
        .collect()
}
