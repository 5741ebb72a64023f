//! Monte Carlo coverage experiments for sharp regression discontinuity bands.
//!
//! Four designs share `X = 2Z − 1` with `Z ~ Beta(2, 4)` and normal errors
//! with standard deviation 0.1295 (scaled by `1 ± |x|` in designs 3 and 4).
//! The target `θ(h)` is the population version of the local polynomial
//! estimator, computed by Gauss–Legendre quadrature that is exact for the
//! polynomial integrands involved.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Beta;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::bands::{resolve_critval, BandError, CritValSource};
use crate::critval::Sides;
use crate::kernels::{normalized_boundary_kernel, KernelError, KernelSpec};
use crate::locpoly::{rd_sharp, LocPolyError, RDData, Side, Variance, VarianceMethod, MAX_CONDITION};

pub const BASE_SD: f64 = 0.1295;
pub const DEFAULT_N: usize = 500;
pub const DEFAULT_REPS: usize = 2_000;
pub const DEFAULT_H_GRID_POINTS: usize = 100;

/// Gauss–Legendre nodes per kernel piece; exact for degree ≤ 31.
const QUAD_NODES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("unknown design {0} (expected 1 to 4)")]
    UnknownDesign(u8),
    #[error("population Gram matrix is ill-conditioned at h = {h} (condition {cond:e})")]
    IllConditioned { h: f64, cond: f64 },
    #[error("bandwidth selector failed: {0}")]
    Bandwidth(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    LocPoly(#[from] LocPolyError),
    #[error(transparent)]
    Band(#[from] BandError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Coefficients of the regression function on each side of the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub id: u8,
    pub g_lower: Vec<f64>,
    pub g_upper: Vec<f64>,
    pub heteroskedasticity: Hetero,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hetero {
    None,
    /// `σ(x) = 0.1295 (1 + |x|)`.
    Increasing,
    /// `σ(x) = 0.1295 (1 − |x|)`.
    Decreasing,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

impl DesignSpec {
    pub fn new(id: u8) -> Result<Self, McError> {
        let g1_lower = vec![0.48, 1.27, 7.18, 20.21, 21.54, 7.33];
        let g1_upper = vec![0.52, 0.84, -3.00, 7.99, -9.01, 3.56];
        let (g_lower, g_upper, heteroskedasticity) = match id {
            1 => (g1_lower, g1_upper, Hetero::None),
            2 => (vec![0.42, 0.84, 0.0, 7.99, -9.01, 3.56], vec![0.52, 0.84, 0.0, 7.99, -9.01, 3.56], Hetero::None),
            3 => (g1_lower, g1_upper, Hetero::Increasing),
            4 => (g1_lower, g1_upper, Hetero::Decreasing),
            other => return Err(McError::UnknownDesign(other)),
        };
        Ok(DesignSpec { id, g_lower, g_upper, heteroskedasticity, n: DEFAULT_N })
    }

    pub fn g(&self, x: f64) -> f64 {
        if x >= 0.0 {
            horner(&self.g_upper, x)
        } else {
            horner(&self.g_lower, x)
        }
    }

    pub fn sigma(&self, x: f64) -> f64 {
        match self.heteroskedasticity {
            Hetero::None => BASE_SD,
            Hetero::Increasing => BASE_SD * (1.0 + x.abs()),
            Hetero::Decreasing => BASE_SD * (1.0 - x.abs()),
        }
    }

    pub fn cond_var(&self, x: f64) -> f64 {
        self.sigma(x).powi(2)
    }

    /// Jump of `g` at the cutoff.
    pub fn theta0(&self) -> f64 {
        self.g_upper[0] - self.g_lower[0]
    }
}

/// Density of `X = 2Z − 1` with `Z ~ Beta(2, 4)`.
pub fn x_density(x: f64) -> f64 {
    if !(-1.0..=1.0).contains(&x) {
        return 0.0;
    }
    let z = (x + 1.0) / 2.0;
    10.0 * z * (1.0 - z).powi(3)
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Sample of size `n` from stream `rep` of `seed`. Errors are drawn by the
/// inverse normal CDF of one open-interval uniform per observation.
pub fn gen_sample_stream(design: &DesignSpec, n: usize, seed: u64, rep: usize) -> RDData {
    let mut rng = replication_rng(seed, rep);
    let beta = Beta::new(2.0, 4.0).expect("valid Beta parameters");
    let normal = Normal::standard();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = 2.0 * beta.sample(&mut rng) - 1.0;
        let u: f64 = Open01.sample(&mut rng);
        x.push(xi);
        y.push(design.g(xi) + design.sigma(xi) * normal.inverse_cdf(u));
    }
    RDData::new(x, y, None).expect("simulated data are finite")
}

pub fn gen_sample(design: &DesignSpec, n: usize, seed: u64) -> RDData {
    gen_sample_stream(design, n, seed, 0)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Golub–Welsch).
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Population intercept of the order-`r` weighted fit on one side.
fn population_intercept(
    design: &DesignSpec,
    side: Side,
    h: f64,
    r: usize,
    kstar: &KernelSpec,
    rule: &(Vec<f64>, Vec<f64>),
) -> Result<f64, McError> {
    let dim = r + 1;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for piece in kstar.pieces() {
        // |x| ranges over [h lo, h hi] ∩ [0, 1]
        let a = h * piece.lo;
        let b = (h * piece.hi).min(1.0);
        if b <= a {
            continue;
        }
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        for (t, w) in rule.0.iter().zip(&rule.1) {
            let ax = mid + half * t;
            let x = match side {
                Side::Upper => ax,
                Side::Lower => -ax,
            };
            let weight = w * half * piece.poly.eval(ax / h) * x_density(x);
            let u = ax / h;
            let g = design.g(x);
            for i in 0..dim {
                let pi = u.powi(i as i32);
                rhs[i] += weight * pi * g;
                for j in 0..dim {
                    gram[(i, j)] += weight * pi * u.powi(j as i32);
                }
            }
        }
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(McError::IllConditioned { h, cond });
    }
    let beta = gram.lu().solve(&rhs).ok_or(McError::IllConditioned { h, cond })?;
    Ok(beta[0])
}

/// `θ(h)`: difference of the population intercepts above and below the cutoff.
pub fn theta_h_true(design: &DesignSpec, h: f64, kstar: &KernelSpec, r: usize) -> Result<f64, McError> {
    let rule = gauss_legendre(QUAD_NODES);
    Ok(population_intercept(design, Side::Upper, h, r, kstar, &rule)?
        - population_intercept(design, Side::Lower, h, r, kstar, &rule)?)
}

fn ols(rows: &[Vec<f64>], y: &[f64]) -> Option<DVector<f64>> {
    let k = rows.first()?.len();
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    (x.transpose() * &x).lu().solve(&(x.transpose() * yv))
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Imbens–Kalyanaraman bandwidth for a local linear sharp RD with kernel
/// `kstar`. The kernel constant is `(∫₀^A k̄² / (∫₀^A u² k̄)²)^{1/5}` for the
/// order-one boundary kernel `k̄`, which is 3.4375 for the triangular kernel.
pub fn ik_bandwidth(data: &RDData, kstar: &KernelSpec) -> Result<f64, McError> {
    let fail = |m: &str| Err(McError::Bandwidth(m.to_string()));
    let x = data.x();
    let y = data.y();
    let n = x.len();
    if n < 10 {
        return fail("need at least 10 observations");
    }
    let nf = n as f64;
    let sx = sample_var(x).sqrt();
    let h1 = 1.84 * sx * nf.powf(-0.2);
    let window = |lo: f64, hi: f64| -> Vec<usize> { (0..n).filter(|&i| x[i] >= lo && x[i] < hi).collect() };
    let left1 = window(-h1, 0.0);
    let right1: Vec<usize> = (0..n).filter(|&i| x[i] >= 0.0 && x[i] <= h1).collect();
    if left1.len() < 2 || right1.len() < 2 {
        return fail("pilot window has fewer than two observations on a side");
    }
    let f0 = (left1.len() + right1.len()) as f64 / (2.0 * nf * h1);
    let var_of = |idx: &[usize]| sample_var(&idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (s2_l, s2_r) = (var_of(&left1), var_of(&right1));

    // global cubic with a jump, fitted between the side medians
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let m = v.len();
        if m % 2 == 1 {
            v[m / 2]
        } else {
            0.5 * (v[m / 2 - 1] + v[m / 2])
        }
    };
    let neg: Vec<f64> = x.iter().copied().filter(|&v| v < 0.0).collect();
    let pos: Vec<f64> = x.iter().copied().filter(|&v| v >= 0.0).collect();
    if neg.len() < 3 || pos.len() < 3 {
        return fail("too few observations on a side");
    }
    let (med_l, med_r) = (median(neg.clone()), median(pos.clone()));
    let mid: Vec<usize> = (0..n).filter(|&i| x[i] >= med_l && x[i] <= med_r).collect();
    let rows: Vec<Vec<f64>> = mid
        .iter()
        .map(|&i| {
            let v = x[i];
            vec![1.0, f64::from(u8::from(v >= 0.0)), v, v * v, v * v * v]
        })
        .collect();
    let ys: Vec<f64> = mid.iter().map(|&i| y[i]).collect();
    let gamma = ols(&rows, &ys).ok_or(McError::Bandwidth("cubic fit is singular".into()))?;
    let m3 = 6.0 * gamma[4];
    if m3 == 0.0 {
        return fail("third derivative estimate is zero");
    }
    let (n_l, n_r) = (neg.len() as f64, pos.len() as f64);
    let h2_l = 3.56 * (s2_l / (f0 * m3 * m3)).powf(1.0 / 7.0) * n_l.powf(-1.0 / 7.0);
    let h2_r = 3.56 * (s2_r / (f0 * m3 * m3)).powf(1.0 / 7.0) * n_r.powf(-1.0 / 7.0);
    let quad = |idx: Vec<usize>| -> Result<(f64, usize), McError> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| vec![1.0, x[i], x[i] * x[i]]).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let b = ols(&rows, &ys).ok_or(McError::Bandwidth("quadratic fit is singular".into()))?;
        Ok((2.0 * b[2], idx.len()))
    };
    let (m2_l, n2_l) = quad(window(-h2_l, 0.0))?;
    let (m2_r, n2_r) = quad((0..n).filter(|&i| x[i] >= 0.0 && x[i] <= h2_r).collect())?;
    let reg_l = 720.0 * s2_l / (n2_l as f64 * h2_l.powi(4));
    let reg_r = 720.0 * s2_r / (n2_r as f64 * h2_r.powi(4));
    let kbar = normalized_boundary_kernel(kstar, 1)?;
    let nu2 = kbar.moment(2, true);
    let ck = (kbar.l2_norm_sq() / 2.0 / (nu2 * nu2)).powf(0.2);
    let h = ck * ((s2_l + s2_r) / (f0 * ((m2_r - m2_l).powi(2) + reg_l + reg_r))).powf(0.2) * nf.powf(-0.2);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        fail("non-finite bandwidth")
    }
}

/// Baseline bandwidths: medians of the IK bandwidth over 500 pilot samples
/// (seed 20240101, `n = 500`, triangular kernel), rounded to three decimals.
pub fn pilot_h0(design_id: u8) -> Option<f64> {
    match design_id {
        1 => Some(PILOT_H0[0]),
        2 => Some(PILOT_H0[1]),
        3 => Some(PILOT_H0[2]),
        4 => Some(PILOT_H0[3]),
        _ => None,
    }
}

const PILOT_H0: [f64; 4] = [0.414, 0.193, 0.405, 0.420];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RangeRule {
    /// `[h₀/2, h₀]`.
    HalfToOne,
    /// `[h₀/2, 2h₀]`.
    HalfToTwo,
    /// `[h₀/4, h₀/2]`.
    QuarterToHalf,
    /// `[h₀, h₀]`: a single bandwidth.
    Single,
}

impl RangeRule {
    pub fn bounds(self, h0: f64) -> (f64, f64) {
        match self {
            RangeRule::HalfToOne => (h0 / 2.0, h0),
            RangeRule::HalfToTwo => (h0 / 2.0, 2.0 * h0),
            RangeRule::QuarterToHalf => (h0 / 4.0, h0 / 2.0),
            RangeRule::Single => (h0, h0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RangeRule::HalfToOne => "(h0/2, h0)",
            RangeRule::HalfToTwo => "(h0/2, 2h0)",
            RangeRule::QuarterToHalf => "(h0/4, h0/2)",
            RangeRule::Single => "(h0, h0)",
        }
    }
}

impl fmt::Display for RangeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RangeRule::HalfToOne => "half-to-one",
            RangeRule::HalfToTwo => "half-to-two",
            RangeRule::QuarterToHalf => "quarter-to-half",
            RangeRule::Single => "single",
        })
    }
}

impl std::str::FromStr for RangeRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "half-to-one" => Ok(RangeRule::HalfToOne),
            "half-to-two" => Ok(RangeRule::HalfToTwo),
            "quarter-to-half" => Ok(RangeRule::QuarterToHalf),
            "single" => Ok(RangeRule::Single),
            _ => Err(format!("range must be half-to-one, half-to-two, quarter-to-half or single; got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Baseline {
    /// Use this `h₀` in every replication.
    Fixed(f64),
    /// Use the design's pilot constant.
    Pilot,
    /// Recompute the IK bandwidth in every replication.
    Ik,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// `θ(h)` at each bandwidth.
    ThetaH,
    /// The jump `θ(0)` at every bandwidth.
    Theta0,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::ThetaH => "theta_h",
            Target::Theta0 => "theta_0",
        })
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theta_h" => Ok(Target::ThetaH),
            "theta_0" => Ok(Target::Theta0),
            _ => Err(format!("target must be theta_h or theta_0; got `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MCConfig {
    pub reps: usize,
    pub n: usize,
    pub h_grid_points: usize,
    pub range_rule: RangeRule,
    pub baseline: Baseline,
    pub kernels: Vec<KernelSpec>,
    pub orders: Vec<usize>,
    pub variances: Vec<VarianceMethod>,
    pub target: Target,
    pub alpha: f64,
    pub seed: u64,
    /// Replications used for each adjusted critical value.
    pub critval_reps: usize,
    pub critval_grid_per_log: usize,
}

impl MCConfig {
    pub fn new(seed: u64) -> Self {
        MCConfig {
            reps: DEFAULT_REPS,
            n: DEFAULT_N,
            h_grid_points: DEFAULT_H_GRID_POINTS,
            range_rule: RangeRule::HalfToOne,
            baseline: Baseline::Pilot,
            kernels: vec![KernelSpec::triangular()],
            orders: vec![1],
            variances: vec![VarianceMethod::Exact],
            target: Target::ThetaH,
            alpha: 0.05,
            seed,
            critval_reps: 100_000,
            critval_grid_per_log: crate::critval::DEFAULT_GRID_PER_LOG,
        }
    }

    fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::Config(m.to_string()));
        if self.reps == 0 {
            return bad("reps must be positive");
        }
        if self.h_grid_points == 0 || (self.h_grid_points == 1 && self.range_rule != RangeRule::Single) {
            return bad("the bandwidth grid needs at least two points");
        }
        if self.kernels.is_empty() || self.orders.is_empty() || self.variances.is_empty() {
            return bad("kernels, orders and variance methods must be nonempty");
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad("alpha must lie in (0, 0.5]");
        }
        if let Baseline::Fixed(h) = self.baseline {
            if !(h > 0.0) {
                return bad("baseline bandwidth must be positive");
            }
        }
        Ok(())
    }
}

/// One row of a coverage table, in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub design: u8,
    pub kernel: String,
    pub order: usize,
    pub variance: VarianceMethod,
    pub range: RangeRule,
    pub target: Target,
    pub critval: f64,
    pub reps_ok: usize,
    pub failures: usize,
    pub pointwise_min: f64,
    pub pointwise_max: f64,
    pub naive: f64,
    pub adjusted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub rows: Vec<CoverageRow>,
}

impl CoverageTable {
    pub const CSV_HEADER: &'static str =
        "design,kernel,order,variance,range,target,critval,reps_ok,failures,pointwise_min,pointwise_max,naive,adjusted";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.4},{},{},{:.2},{:.2},{:.2},{:.2}\n",
                r.design,
                r.kernel,
                r.order,
                r.variance,
                r.range,
                r.target,
                r.critval,
                r.reps_ok,
                r.failures,
                r.pointwise_min,
                r.pointwise_max,
                r.naive,
                r.adjusted
            ));
        }
        out
    }
}

fn h_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if hi == lo {
        return vec![lo];
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut g: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    g[points - 1] = hi;
    g
}

struct Combo {
    kernel: KernelSpec,
    order: usize,
    variance: VarianceMethod,
    critval: f64,
    z: f64,
    /// `θ(h)` on the fixed grid, when the grid does not vary by replication.
    targets: Option<Vec<f64>>,
}

/// Per-replication outcome of one combination: `None` when a fit failed.
struct RepOutcome {
    pointwise: Vec<bool>,
    naive: bool,
    adjusted: bool,
}

fn targets_for(
    design: &DesignSpec,
    grid: &[f64],
    k: &KernelSpec,
    r: usize,
    target: Target,
) -> Result<Vec<f64>, McError> {
    match target {
        Target::Theta0 => Ok(vec![design.theta0(); grid.len()]),
        Target::ThetaH => grid.iter().map(|&h| theta_h_true(design, h, k, r)).collect(),
    }
}

/// Coverage of naive, adjusted and pointwise bands over `config.reps`
/// replications of `design`.
pub fn run_coverage(design: &DesignSpec, config: &MCConfig) -> Result<CoverageTable, McError> {
    config.validate()?;
    let fixed_h0 = match config.baseline {
        Baseline::Fixed(h) => Some(h),
        Baseline::Pilot => Some(pilot_h0(design.id).ok_or(McError::UnknownDesign(design.id))?),
        Baseline::Ik => None,
    };
    let sides = Sides::Two;
    let (lo_mult, hi_mult) = config.range_rule.bounds(1.0);
    let ratio = hi_mult / lo_mult;
    let fixed_grid = fixed_h0.map(|h0| h_grid(lo_mult * h0, hi_mult * h0, config.h_grid_points));
    let mut combos = Vec::new();
    for k in &config.kernels {
        for &order in &config.orders {
            let c = resolve_critval(
                k,
                order,
                ratio,
                config.alpha,
                sides,
                CritValSource::Simulate {
                    n_reps: config.critval_reps,
                    grid_per_log: config.critval_grid_per_log,
                    seed: config.seed,
                },
            )?;
            let targets = match &fixed_grid {
                Some(g) => Some(targets_for(design, g, k, order, config.target)?),
                None => None,
            };
            for &variance in &config.variances {
                combos.push(Combo {
                    kernel: k.clone(),
                    order,
                    variance,
                    critval: c.value,
                    z: sides.normal_quantile(config.alpha),
                    targets: targets.clone(),
                });
            }
        }
    }
    let oracle = |x: f64| design.cond_var(x);
    let per_rep: Vec<Vec<Option<RepOutcome>>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let data = gen_sample_stream(design, config.n, config.seed, rep);
            let grid = match &fixed_grid {
                Some(g) => g.clone(),
                None => match ik_bandwidth(&data, &KernelSpec::triangular()) {
                    Ok(h0) => h_grid(lo_mult * h0, hi_mult * h0, config.h_grid_points),
                    Err(_) => return combos.iter().map(|_| None).collect(),
                },
            };
            combos
                .iter()
                .map(|c| {
                    let var = match c.variance {
                        VarianceMethod::Ehw => Variance::Ehw,
                        VarianceMethod::Nn => Variance::Nn,
                        VarianceMethod::Plugin => Variance::Plugin,
                        VarianceMethod::Exact => Variance::Exact(&oracle),
                    };
                    let computed;
                    let targets = match &c.targets {
                        Some(t) => t,
                        None => {
                            computed = targets_for(design, &grid, &c.kernel, c.order, config.target).ok()?;
                            &computed
                        }
                    };
                    let mut pointwise = Vec::with_capacity(grid.len());
                    let mut naive = true;
                    let mut adjusted = true;
                    for (&h, &t) in grid.iter().zip(targets) {
                        let e = rd_sharp(&data, h, c.order, &c.kernel, var).ok()?;
                        let dev = (e.theta_hat - t).abs();
                        let pw = dev <= c.z * e.se;
                        pointwise.push(pw);
                        naive &= pw;
                        adjusted &= dev <= c.critval * e.se;
                    }
                    Some(RepOutcome { pointwise, naive, adjusted })
                })
                .collect()
        })
        .collect();
    let rows = combos
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let ok: Vec<&RepOutcome> = per_rep.iter().filter_map(|r| r[j].as_ref()).collect();
            let reps_ok = ok.len();
            let pct = |count: usize| {
                if reps_ok == 0 {
                    f64::NAN
                } else {
                    100.0 * count as f64 / reps_ok as f64
                }
            };
            let points = ok.first().map_or(0, |o| o.pointwise.len());
            let pw: Vec<f64> = (0..points).map(|i| pct(ok.iter().filter(|o| o.pointwise[i]).count())).collect();
            CoverageRow {
                design: design.id,
                kernel: c.kernel.name().to_string(),
                order: c.order,
                variance: c.variance,
                range: config.range_rule,
                target: config.target,
                critval: c.critval,
                reps_ok,
                failures: config.reps - reps_ok,
                pointwise_min: pw.iter().copied().fold(f64::NAN, f64::min),
                pointwise_max: pw.iter().copied().fold(f64::NAN, f64::max),
                naive: pct(ok.iter().filter(|o| o.naive).count()),
                adjusted: pct(ok.iter().filter(|o| o.adjusted).count()),
            }
        })
        .collect();
    Ok(CoverageTable { rows })
}
