//! Pointwise and snooping-adjusted confidence bands over a bandwidth grid.
//!
//! A band takes an [`EstimateCurve`] of `(h, θ̂(h), se(h))` and widens every
//! interval from the normal quantile to the critical value for the ratio
//! `h̄/h̲` of the grid. Critical values come from a fresh simulation, a
//! [`CritValCurve`] (a monotone interpolant in `log ratio` through simulated
//! knots that share random numbers), or a fixed number supplied by the caller.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::critval::{
    critical_value, ladder_quantile, CritValError, CritValRequest, LadderDraws, Sides, DEFAULT_GRID_PER_LOG,
};
use crate::kernels::{equivalent_kernel, KernelError, KernelSpec};
use crate::locpoly::RDEstimate;

/// Knot ratios of a cached critical-value curve.
pub const CURVE_KNOTS: [f64; 12] = [1.0, 1.2, 1.5, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0, 20.0, 50.0, 100.0];
/// Largest ratio considered by [`sensitivity_ratio`].
pub const SENSITIVITY_CAP: f64 = 100.0;
/// Bisection stops when the bracket is this narrow in `log ratio`.
pub const SENSITIVITY_LOG_TOL: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("invalid estimate curve: {0}")]
    InvalidCurve(String),
    #[error("ratio {ratio} is outside the cached range [1, {max}]")]
    OutsideCache { ratio: f64, max: f64 },
    #[error("the pointwise interval already contains {value}")]
    NotExcludedPointwise { value: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    CritVal(#[from] CritValError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub h: f64,
    pub theta_hat: f64,
    pub se: f64,
    /// Observations with positive weight below and above the cutoff, when known.
    pub n_eff: Option<(usize, usize)>,
}

/// Estimates over a bandwidth grid, sorted by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateCurve {
    points: Vec<CurvePoint>,
    kernel: KernelSpec,
    order: usize,
    estimator: String,
}

impl EstimateCurve {
    pub fn new(
        points: Vec<CurvePoint>,
        kernel: KernelSpec,
        order: usize,
        estimator: impl Into<String>,
    ) -> Result<Self, BandError> {
        if points.is_empty() {
            return Err(BandError::InvalidCurve("no points".into()));
        }
        if points.windows(2).any(|w| !(w[1].h > w[0].h)) {
            return Err(BandError::InvalidCurve("bandwidths must be strictly increasing".into()));
        }
        if let Some(p) =
            points.iter().find(|p| !(p.h >= 0.0 && p.se > 0.0 && p.se.is_finite() && p.theta_hat.is_finite()))
        {
            return Err(BandError::InvalidCurve(format!(
                "point at h = {} needs h ≥ 0, finite estimate and se > 0 (se = {})",
                p.h, p.se
            )));
        }
        Ok(EstimateCurve { points, kernel, order, estimator: estimator.into() })
    }

    pub fn from_estimates(
        estimates: &[RDEstimate],
        kernel: KernelSpec,
        order: usize,
        estimator: impl Into<String>,
    ) -> Result<Self, BandError> {
        let points = estimates
            .iter()
            .map(|e| CurvePoint {
                h: e.h,
                theta_hat: e.theta_hat,
                se: e.se,
                n_eff: Some((e.n_eff_left, e.n_eff_right)),
            })
            .collect();
        EstimateCurve::new(points, kernel, order, estimator)
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn estimator(&self) -> &str {
        &self.estimator
    }

    /// `h̄/h̲`; infinite when the grid starts at zero.
    pub fn ratio(&self) -> f64 {
        self.points.last().unwrap().h / self.points[0].h
    }
}

/// `n` evenly spaced bandwidths from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, BandError> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(BandError::Invalid(format!("need 0 < hmin ≤ hmax, got {lo}, {hi}")));
    }
    if n == 0 || (n == 1 && hi != lo) {
        return Err(BandError::Invalid("grid needs at least two points when hmin < hmax".into()));
    }
    if hi == lo {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut g: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    g[n - 1] = hi;
    Ok(g)
}

/// Monotone cubic interpolant (Fritsch–Carlson) of simulated critical values
/// against `log ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct CritValCurve {
    log_knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    pub alpha: f64,
    pub sides: Sides,
}

impl CritValCurve {
    /// Fits the interpolant through `(ratio, value)` pairs; values must be
    /// nondecreasing in the ratio.
    pub fn from_knots(ratios: &[f64], values: &[f64], alpha: f64, sides: Sides) -> Result<Self, BandError> {
        if ratios.len() != values.len() || ratios.is_empty() {
            return Err(BandError::Invalid("knots and values must be nonempty and equal in length".into()));
        }
        if ratios.windows(2).any(|w| !(w[1] > w[0])) || ratios[0] < 1.0 {
            return Err(BandError::Invalid("knot ratios must be increasing and ≥ 1".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(BandError::Invalid("knot values must be nondecreasing".into()));
        }
        let x: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 1 {
            let delta: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / (x[i + 1] - x[i])).collect();
            m[0] = delta[0];
            m[n - 1] = delta[n - 2];
            for i in 1..n - 1 {
                m[i] = if delta[i - 1] * delta[i] <= 0.0 { 0.0 } else { (delta[i - 1] + delta[i]) / 2.0 };
            }
            for i in 0..n - 1 {
                if delta[i] == 0.0 {
                    m[i] = 0.0;
                    m[i + 1] = 0.0;
                    continue;
                }
                let a = m[i] / delta[i];
                let b = m[i + 1] / delta[i];
                let s = a * a + b * b;
                if s > 9.0 {
                    let tau = 3.0 / s.sqrt();
                    m[i] = tau * a * delta[i];
                    m[i + 1] = tau * b * delta[i];
                }
            }
        }
        Ok(CritValCurve { log_knots: x, values: values.to_vec(), slopes: m, alpha, sides })
    }

    /// Simulates the knots with common random numbers and fits the curve.
    pub fn simulate(
        k: &KernelSpec,
        alpha: f64,
        sides: Sides,
        n_reps: usize,
        grid_per_log: usize,
        seed: u64,
    ) -> Result<Self, BandError> {
        let ladder = LadderDraws::simulate(k, &CURVE_KNOTS, grid_per_log, n_reps, seed, sides)?;
        let mut floor = f64::NEG_INFINITY;
        let values: Vec<f64> = ladder
            .draws
            .iter()
            .zip(CURVE_KNOTS)
            .map(|(d, ratio)| {
                let mut s = d.clone();
                s.sort_by(f64::total_cmp);
                // the exact value at ratio one may sit above a noisy neighbour
                floor = floor.max(ladder_quantile(ratio, &s, alpha, sides));
                floor
            })
            .collect();
        CritValCurve::from_knots(&CURVE_KNOTS, &values, alpha, sides)
    }

    pub fn max_ratio(&self) -> f64 {
        self.log_knots.last().unwrap().exp()
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.log_knots.iter().map(|x| x.exp()).zip(self.values.iter().copied())
    }

    pub fn value(&self, ratio: f64) -> Result<f64, BandError> {
        let x = ratio.ln();
        let n = self.log_knots.len();
        let eps = 1e-12;
        if !(x >= self.log_knots[0] - eps && x <= self.log_knots[n - 1] + eps) {
            return Err(BandError::OutsideCache { ratio, max: self.max_ratio() });
        }
        if n == 1 {
            return Ok(self.values[0]);
        }
        let x = x.clamp(self.log_knots[0], self.log_knots[n - 1]);
        let i = self.log_knots[..n - 1].iter().rposition(|&k| k <= x).unwrap_or(0);
        let (x0, x1) = (self.log_knots[i], self.log_knots[i + 1]);
        let w = x1 - x0;
        let t = (x - x0) / w;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.values[i] + h10 * w * self.slopes[i] + h01 * self.values[i + 1] + h11 * w * self.slopes[i + 1])
    }
}

/// Key of a cached critical-value curve.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CurveKey {
    pub kernel: String,
    pub order: usize,
    pub sides: Sides,
    pub alpha_bits: u64,
    pub n_reps: usize,
    pub grid_per_log: usize,
    pub seed: u64,
}

/// In-memory curves keyed by kernel, order, sides, level and simulation
/// settings. Readers share the map; a missing curve is built outside the lock
/// and inserted once.
#[derive(Debug, Default)]
pub struct CritValCache {
    curves: RwLock<HashMap<CurveKey, Arc<CritValCurve>>>,
}

impl CritValCache {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn get_or_build(
        &self,
        kstar: &KernelSpec,
        order: usize,
        alpha: f64,
        sides: Sides,
        n_reps: usize,
        grid_per_log: usize,
        seed: u64,
    ) -> Result<Arc<CritValCurve>, BandError> {
        let key = CurveKey {
            kernel: kernel_fingerprint(kstar),
            order,
            sides,
            alpha_bits: alpha.to_bits(),
            n_reps,
            grid_per_log,
            seed,
        };
        if let Some(c) = self.curves.read().unwrap().get(&key) {
            return Ok(Arc::clone(c));
        }
        let k = equivalent_kernel(kstar, order)?.result;
        let curve = Arc::new(CritValCurve::simulate(&k, alpha, sides, n_reps, grid_per_log, seed)?);
        let mut map = self.curves.write().unwrap();
        Ok(Arc::clone(map.entry(key).or_insert(curve)))
    }

    pub fn len(&self) -> usize {
        self.curves.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Text identifying a kernel by its support and coefficients.
pub fn kernel_fingerprint(k: &KernelSpec) -> String {
    let mut s = format!("A={:?}", k.support());
    for p in k.pieces() {
        s.push_str(&format!(";[{:?},{:?}]", p.lo, p.hi));
        for c in p.poly.coeffs() {
            s.push_str(&format!(",{c:?}"));
        }
    }
    s
}

/// Where a band gets its critical value.
#[derive(Debug, Clone, Copy)]
pub enum CritValSource<'a> {
    /// Run a new simulation for the curve's exact ratio.
    Simulate { n_reps: usize, grid_per_log: usize, seed: u64 },
    /// Interpolate a cached curve.
    Curve(&'a CritValCurve),
    /// Use this value.
    Fixed(f64),
}

impl Default for CritValSource<'_> {
    fn default() -> Self {
        CritValSource::Simulate {
            n_reps: crate::critval::DEFAULT_REPS_INTERACTIVE,
            grid_per_log: DEFAULT_GRID_PER_LOG,
            seed: 42,
        }
    }
}

/// A critical value and its Monte Carlo standard error (zero when fixed or
/// interpolated without one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CritVal {
    pub value: f64,
    pub mc_se: f64,
}

/// Resolves the adjusted critical value for ratio `t` and the order-`order`
/// equivalent kernel of `kstar`.
pub fn resolve_critval(
    kstar: &KernelSpec,
    order: usize,
    ratio: f64,
    alpha: f64,
    sides: Sides,
    source: CritValSource<'_>,
) -> Result<CritVal, BandError> {
    if !(ratio.is_finite() && ratio >= 1.0) {
        return Err(BandError::Invalid(format!("ratio must be ≥ 1, got {ratio}")));
    }
    match source {
        CritValSource::Fixed(value) => Ok(CritVal { value, mc_se: 0.0 }),
        CritValSource::Curve(c) => {
            if c.sides != sides || c.alpha != alpha {
                return Err(BandError::Invalid("cached curve has a different level or sidedness".into()));
            }
            Ok(CritVal { value: c.value(ratio)?, mc_se: 0.0 })
        }
        CritValSource::Simulate { n_reps, grid_per_log, seed } => {
            let k = equivalent_kernel(kstar, order)?.result;
            let req = CritValRequest::new(k, ratio, alpha, sides)
                .with_reps(n_reps)
                .with_grid_per_log(grid_per_log)
                .with_seed(seed);
            let res = critical_value(&req)?;
            Ok(CritVal { value: res.value, mc_se: res.mc_se })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub h: f64,
    pub theta_hat: f64,
    pub se: f64,
    pub lo_pw: f64,
    pub hi_pw: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_eff: Option<(usize, usize)>,
}

/// Pointwise and adjusted intervals at every grid bandwidth. One-sided bands
/// are lower confidence bounds with an infinite upper end.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBand {
    pub curve: EstimateCurve,
    pub alpha: f64,
    pub sides: Sides,
    pub critval: CritVal,
    pub z: f64,
    pub points: Vec<BandPoint>,
}

fn interval(theta: f64, se: f64, c: f64, sides: Sides) -> (f64, f64) {
    match sides {
        Sides::Two => (theta - c * se, theta + c * se),
        Sides::One => (theta - c * se, f64::INFINITY),
    }
}

pub fn band_with_critval(curve: EstimateCurve, alpha: f64, sides: Sides, critval: CritVal) -> UniformBand {
    let z = sides.normal_quantile(alpha);
    let points = curve
        .points()
        .iter()
        .map(|p| {
            let (lo_pw, hi_pw) = interval(p.theta_hat, p.se, z, sides);
            let (lo, hi) = interval(p.theta_hat, p.se, critval.value, sides);
            BandPoint { h: p.h, theta_hat: p.theta_hat, se: p.se, lo_pw, hi_pw, lo, hi, n_eff: p.n_eff }
        })
        .collect();
    UniformBand { curve, alpha, sides, critval, z, points }
}

/// Band whose critical value is taken at the grid's ratio `h̄/h̲`.
pub fn uniform_band(
    curve: &EstimateCurve,
    alpha: f64,
    sides: Sides,
    source: CritValSource<'_>,
) -> Result<UniformBand, BandError> {
    check_alpha(alpha)?;
    let c = resolve_critval(curve.kernel(), curve.order(), curve.ratio(), alpha, sides, source)?;
    Ok(band_with_critval(curve.clone(), alpha, sides, c))
}

fn check_alpha(alpha: f64) -> Result<(), BandError> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(BandError::Invalid(format!("alpha must lie in (0, 0.5], got {alpha}")))
    }
}

impl UniformBand {
    pub const CSV_HEADER: &'static str = "h,theta,se,lo_pw,hi_pw,lo_unif,hi_unif,n_eff_left,n_eff_right";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let (l, r) = p.n_eff.map_or((String::new(), String::new()), |(l, r)| (l.to_string(), r.to_string()));
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                p.h, p.theta_hat, p.se, p.lo_pw, p.hi_pw, p.lo, p.hi, l, r
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub critval: f64,
}

/// Adjusted interval for a single published estimate, given the ratio of the
/// bandwidths that were examined.
#[allow(clippy::too_many_arguments)]
pub fn snooping_adjusted_ci(
    theta_hat: f64,
    se: f64,
    ratio: f64,
    kstar: &KernelSpec,
    order: usize,
    alpha: f64,
    sides: Sides,
    source: CritValSource<'_>,
) -> Result<Interval, BandError> {
    check_alpha(alpha)?;
    if !(se >= 0.0 && se.is_finite()) {
        return Err(BandError::Invalid(format!("se must be nonnegative, got {se}")));
    }
    let c = resolve_critval(kstar, order, ratio, alpha, sides, source)?;
    let (lo, hi) = interval(theta_hat, se, c.value, sides);
    Ok(Interval { lo, hi, critval: c.value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sensitivity {
    /// Largest ratio at which the adjusted interval still excludes the value.
    Ratio(f64),
    /// The value stays excluded up to the cap.
    UnboundedAtCap(f64),
}

/// Largest `h̄/h̲` for which the adjusted interval around `theta_hat` excludes
/// `excluded`, found by bisection in `log ratio` on a critical-value curve.
pub fn sensitivity_ratio(
    theta_hat: f64,
    se: f64,
    excluded: f64,
    curve: &CritValCurve,
) -> Result<Sensitivity, BandError> {
    if !(se > 0.0) {
        return Err(BandError::Invalid(format!("se must be positive, got {se}")));
    }
    let stat = match curve.sides {
        Sides::Two => (theta_hat - excluded).abs() / se,
        Sides::One => (theta_hat - excluded) / se,
    };
    let cap = SENSITIVITY_CAP.min(curve.max_ratio());
    if !(stat > curve.value(1.0)?) {
        return Err(BandError::NotExcludedPointwise { value: excluded });
    }
    if stat > curve.value(cap)? {
        return Ok(Sensitivity::UnboundedAtCap(cap));
    }
    let (mut lo, mut hi) = (0.0f64, cap.ln());
    while hi - lo > SENSITIVITY_LOG_TOL {
        let mid = 0.5 * (lo + hi);
        if curve.value(mid.exp())? < stat {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Sensitivity::Ratio(lo.exp()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapReport {
    pub overlap: bool,
    /// Distance between the adjusted intervals; negative when they intersect.
    pub gap: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Whether the adjusted intervals at the grid points nearest `h1` and `h2`
/// intersect.
pub fn band_overlap_report(band: &UniformBand, h1: f64, h2: f64) -> OverlapReport {
    let nearest = |h: f64| band.points.iter().min_by(|a, b| (a.h - h).abs().total_cmp(&(b.h - h).abs())).unwrap();
    let (a, b) = (nearest(h1), nearest(h2));
    let gap = a.lo.max(b.lo) - a.hi.min(b.hi);
    OverlapReport { overlap: gap <= 0.0, gap, h1: a.h, h2: b.h }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64, f64)]) -> EstimateCurve {
        EstimateCurve::new(
            points.iter().map(|&(h, theta_hat, se)| CurvePoint { h, theta_hat, se, n_eff: None }).collect(),
            KernelSpec::triangular(),
            0,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn curve_validation() {
        let pts = |h2: f64, se: f64| {
            vec![
                CurvePoint { h: 1.0, theta_hat: 0.0, se: 1.0, n_eff: None },
                CurvePoint { h: h2, theta_hat: 0.0, se, n_eff: None },
            ]
        };
        assert!(EstimateCurve::new(pts(0.5, 1.0), KernelSpec::uniform(), 0, "x").is_err());
        assert!(EstimateCurve::new(pts(2.0, 0.0), KernelSpec::uniform(), 0, "x").is_err());
        assert!(EstimateCurve::new(pts(2.0, 1.0), KernelSpec::uniform(), 0, "x").is_ok());
    }

    #[test]
    fn fixed_band_arithmetic() {
        let c = curve(&[(1.0, 0.5, 0.1), (2.0, 0.7, 0.2), (3.0, 0.6, 0.3)]);
        let b = uniform_band(&c, 0.05, Sides::Two, CritValSource::Fixed(2.5)).unwrap();
        for (p, q) in b.points.iter().zip(c.points()) {
            assert_eq!(p.lo, q.theta_hat - 2.5 * q.se);
            assert_eq!(p.hi, q.theta_hat + 2.5 * q.se);
            assert!(p.lo <= p.lo_pw && p.hi >= p.hi_pw);
        }
        let one = uniform_band(&c, 0.05, Sides::One, CritValSource::Fixed(2.2)).unwrap();
        assert!(one.points[0].hi.is_infinite());
    }

    #[test]
    fn monotone_spline_interpolates_knots() {
        let r = [1.0, 2.0, 4.0, 8.0];
        let v = [1.96, 2.2, 2.2, 2.5];
        let c = CritValCurve::from_knots(&r, &v, 0.05, Sides::Two).unwrap();
        for (a, b) in r.iter().zip(v) {
            assert!((c.value(*a).unwrap() - b).abs() < 1e-12);
        }
        let mut prev = 0.0;
        for i in 0..=300 {
            let t = (8f64.ln() * i as f64 / 300.0).exp();
            let x = c.value(t).unwrap();
            assert!(x >= prev - 1e-12);
            prev = x;
        }
        assert!((c.value(3.0).unwrap() - 2.2).abs() < 1e-12);
        assert!(c.value(9.0).is_err());
    }

    #[test]
    fn sensitivity_edges() {
        let c = CritValCurve::from_knots(&[1.0, 10.0, 100.0], &[1.96, 2.8, 3.04], 0.05, Sides::Two).unwrap();
        assert!(matches!(sensitivity_ratio(1.0, 1.0, 0.0, &c), Err(BandError::NotExcludedPointwise { .. })));
        assert_eq!(sensitivity_ratio(10.0, 1.0, 0.0, &c).unwrap(), Sensitivity::UnboundedAtCap(100.0));
        match sensitivity_ratio(2.8, 1.0, 0.0, &c).unwrap() {
            Sensitivity::Ratio(r) => assert!((r.ln() - 10f64.ln()).abs() < SENSITIVITY_LOG_TOL),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlap_identical_points() {
        let c = curve(&[(1.0, 0.5, 0.1), (2.0, 0.5, 0.1)]);
        let b = uniform_band(&c, 0.05, Sides::Two, CritValSource::Fixed(2.0)).unwrap();
        let r = band_overlap_report(&b, 1.0, 1.0);
        assert!(r.overlap && r.gap < 0.0);
        let c = curve(&[(1.0, 0.0, 0.1), (2.0, 1.0, 0.1)]);
        let b = uniform_band(&c, 0.05, Sides::Two, CritValSource::Fixed(2.0)).unwrap();
        let r = band_overlap_report(&b, 1.1, 1.9);
        assert!(!r.overlap);
        assert!((r.gap - 0.6).abs() < 1e-12);
    }

    #[test]
    fn linear_grid_endpoints() {
        let g = linear_grid(0.02, 0.4, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g[0], 0.02);
        assert_eq!(g[99], 0.4);
        assert_eq!(linear_grid(0.1, 0.1, 5).unwrap(), vec![0.1]);
    }
}
