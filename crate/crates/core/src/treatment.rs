//! Local average treatment effects on the largest complier sets and trimmed
//! average treatment effects.
//!
//! The LATE at window width `h` compares units with instrument in
//! `[z̲, z̲+h]` and `[z̄−h, z̄]`; its band uses the uniform-kernel critical value
//! at `h̄/h̲`. The trimmed ATE averages `ỹ` over `{h ≤ e ≤ 1−h}`; its band uses
//! the uniform-kernel critical value at `t̂`, a variance ratio, rather than the
//! trimming ratio.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::bands::{
    band_with_critval, resolve_critval, uniform_band, BandError, CritValSource, CurvePoint, EstimateCurve, UniformBand,
};
use crate::critval::Sides;
use crate::kernels::KernelSpec;

/// Smallest first-stage difference accepted by [`late_estimate`].
pub const MIN_FIRST_STAGE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreatmentError {
    #[error("windows of width {h} overlap on support [{lo}, {hi}]")]
    OverlappingWindows { h: f64, lo: f64, hi: f64 },
    #[error("first-stage difference {delta:e} is too small")]
    NoFirstStage { delta: f64 },
    #[error("window at h = {h} is empty")]
    EmptyWindow { h: f64 },
    #[error("trimmed set at h = {h} is empty")]
    EmptyTrimSet { h: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Band(#[from] BandError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateSample {
    pub z: f64,
    pub d: f64,
    pub y: f64,
}

/// Instrument, treatment and outcome columns with the instrument's support.
#[derive(Debug, Clone, PartialEq)]
pub struct LateData {
    rows: Vec<LateSample>,
    z_lo: f64,
    z_hi: f64,
}

impl LateData {
    /// Support endpoints default to the sample minimum and maximum of `z`.
    pub fn new(rows: Vec<LateSample>, support: Option<(f64, f64)>) -> Result<Self, TreatmentError> {
        if rows.is_empty() {
            return Err(TreatmentError::Invalid("no observations".into()));
        }
        if rows.iter().any(|r| !(r.z.is_finite() && r.d.is_finite() && r.y.is_finite())) {
            return Err(TreatmentError::Invalid("non-finite value".into()));
        }
        let (z_lo, z_hi) = support.unwrap_or_else(|| {
            rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.z), b.max(r.z)))
        });
        if !(z_hi > z_lo) {
            return Err(TreatmentError::Invalid(format!("support [{z_lo}, {z_hi}] is empty")));
        }
        Ok(LateData { rows, z_lo, z_hi })
    }

    pub fn rows(&self) -> &[LateSample] {
        &self.rows
    }

    pub fn support(&self) -> (f64, f64) {
        (self.z_lo, self.z_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateEstimate {
    pub h: f64,
    /// Ratio of window mean differences.
    pub theta_hat: f64,
    /// The same quantity from the just-identified IV solve.
    pub theta_iv: f64,
    /// Heteroskedasticity-robust (HC0) IV standard error.
    pub se: f64,
    pub n_low: usize,
    pub n_high: usize,
}

/// LATE over the windows `[z̲, z̲+h]` and `[z̄−h, z̄]`.
pub fn late_estimate(data: &LateData, h: f64) -> Result<LateEstimate, TreatmentError> {
    let (lo, hi) = data.support();
    if !(h > 0.0) {
        return Err(TreatmentError::Invalid(format!("window width must be positive, got {h}")));
    }
    if lo + h >= hi - h {
        return Err(TreatmentError::OverlappingWindows { h, lo, hi });
    }
    let in_low = |z: f64| z >= lo && z <= lo + h;
    let in_high = |z: f64| z >= hi - h && z <= hi;
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [0usize; 2];
    for r in data.rows() {
        let w = if in_low(r.z) {
            0
        } else if in_high(r.z) {
            1
        } else {
            continue;
        };
        sums[w][0] += r.y;
        sums[w][1] += r.d;
        counts[w] += 1;
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(TreatmentError::EmptyWindow { h });
    }
    let mean = |w: usize, j: usize| sums[w][j] / counts[w] as f64;
    let delta_d = mean(1, 1) - mean(0, 1);
    if delta_d.abs() <= MIN_FIRST_STAGE {
        return Err(TreatmentError::NoFirstStage { delta: delta_d });
    }
    let theta_hat = (mean(1, 0) - mean(0, 0)) / delta_d;

    // IV of y on (1, d) with instruments (1, 1(z ≥ z̄ − h)) over both windows
    let pooled: Vec<(f64, f64, f64)> = data
        .rows()
        .iter()
        .filter(|r| in_low(r.z) || in_high(r.z))
        .map(|r| (f64::from(u8::from(in_high(r.z))), r.d, r.y))
        .collect();
    let mut zx = Matrix2::zeros();
    let mut zy = Vector2::zeros();
    for &(z, d, y) in &pooled {
        let zv = Vector2::new(1.0, z);
        let xv = Vector2::new(1.0, d);
        zx += zv * xv.transpose();
        zy += zv * y;
    }
    let zx_inv = zx.try_inverse().ok_or(TreatmentError::NoFirstStage { delta: delta_d })?;
    let beta = zx_inv * zy;
    let mut meat = Matrix2::zeros();
    for &(z, d, y) in &pooled {
        let u = y - beta[0] - beta[1] * d;
        let zv = Vector2::new(1.0, z);
        meat += zv * zv.transpose() * (u * u);
    }
    let v = zx_inv * meat * zx_inv.transpose();
    Ok(LateEstimate {
        h,
        theta_hat,
        theta_iv: beta[1],
        se: v[(1, 1)].max(0.0).sqrt(),
        n_low: counts[0],
        n_high: counts[1],
    })
}

/// LATE estimates over `h_grid` with a uniform-kernel adjusted band.
pub fn late_band(
    data: &LateData,
    h_grid: &[f64],
    alpha: f64,
    sides: Sides,
    source: CritValSource<'_>,
) -> Result<(Vec<LateEstimate>, UniformBand), TreatmentError> {
    let estimates: Vec<LateEstimate> = h_grid.par_iter().map(|&h| late_estimate(data, h)).collect::<Result<_, _>>()?;
    let points = estimates
        .iter()
        .map(|e| CurvePoint { h: e.h, theta_hat: e.theta_hat, se: e.se, n_eff: Some((e.n_low, e.n_high)) })
        .collect();
    let curve = EstimateCurve::new(points, KernelSpec::uniform(), 0, "late")?;
    let band = uniform_band(&curve, alpha, sides, source)?;
    Ok((estimates, band))
}

/// `t̂ = se(h̲)²N(h̲)² / (se(h̄)²N(h̄)²)`. Values below one are returned as
/// computed, with a warning.
pub fn trim_that(se_lo: f64, n_lo: f64, se_hi: f64, n_hi: f64) -> Result<f64, TreatmentError> {
    if !(se_lo > 0.0 && n_lo > 0.0 && se_hi > 0.0 && n_hi > 0.0) {
        return Err(TreatmentError::Invalid("t̂ needs positive standard errors and counts".into()));
    }
    let t = (se_lo * n_lo).powi(2) / (se_hi * n_hi).powi(2);
    if t < 1.0 {
        log::warn!("t̂ = {t} is below one; the sample variance is not decreasing in the trimming level");
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteSample {
    pub y: f64,
    pub d: f64,
    pub e: f64,
    pub mu0: f64,
    pub mu1: f64,
}

impl AteSample {
    /// Doubly robust score `ỹ`.
    pub fn tilde_y(&self) -> f64 {
        self.d * (self.y - self.mu1) / self.e - (1.0 - self.d) * (self.y - self.mu0) / (1.0 - self.e) + self.mu1
            - self.mu0
    }
}

/// Trimmed-ATE estimate at one trimming level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteEstimate {
    pub h: f64,
    pub theta_hat: f64,
    pub se: f64,
    /// Units with `h ≤ e ≤ 1 − h`.
    pub n_trim: usize,
}

pub fn validate_ate(data: &[AteSample]) -> Result<(), TreatmentError> {
    for (i, s) in data.iter().enumerate() {
        if ![s.y, s.d, s.e, s.mu0, s.mu1].iter().all(|v| v.is_finite()) {
            return Err(TreatmentError::Invalid(format!("row {}: non-finite value", i + 1)));
        }
        if !(s.e > 0.0 && s.e < 1.0) {
            return Err(TreatmentError::Invalid(format!("row {}: propensity {} outside (0, 1)", i + 1, s.e)));
        }
        if s.d != 0.0 && s.d != 1.0 {
            return Err(TreatmentError::Invalid(format!("row {}: treatment must be 0 or 1", i + 1)));
        }
    }
    Ok(())
}

/// `θ̂(h)`: the mean of `ỹ` over the trimmed set, with standard error
/// `√(Σ_trim (ỹ − θ̂)²) / N(h)`.
pub fn ate_trim_estimate(data: &[AteSample], h: f64) -> Result<AteEstimate, TreatmentError> {
    if !(0.0..0.5).contains(&h) {
        return Err(TreatmentError::Invalid(format!("trimming level must lie in [0, 0.5), got {h}")));
    }
    let kept: Vec<f64> = data.iter().filter(|s| s.e >= h && s.e <= 1.0 - h).map(AteSample::tilde_y).collect();
    if kept.is_empty() {
        return Err(TreatmentError::EmptyTrimSet { h });
    }
    let n = kept.len() as f64;
    let theta = kept.iter().sum::<f64>() / n;
    let ss: f64 = kept.iter().map(|v| (v - theta).powi(2)).sum();
    Ok(AteEstimate { h, theta_hat: theta, se: ss.sqrt() / n, n_trim: kept.len() })
}

/// Band over trimming levels with its `t̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct AteBand {
    pub estimates: Vec<AteEstimate>,
    pub t_hat: f64,
    pub band: UniformBand,
}

/// Band from `(h, θ̂, se, N)` summaries, for reader-side use when only
/// published estimates are available. `t̂` below one is raised to one before
/// the critical value is looked up.
pub fn ate_band_from_summaries(
    estimates: Vec<AteEstimate>,
    alpha: f64,
    source: CritValSource<'_>,
) -> Result<AteBand, TreatmentError> {
    if estimates.is_empty() {
        return Err(TreatmentError::Invalid("no trimming levels".into()));
    }
    let first = estimates[0];
    let last = *estimates.last().unwrap();
    let t_hat = trim_that(first.se, first.n_trim as f64, last.se, last.n_trim as f64)?;
    let uniform = KernelSpec::uniform();
    let c = resolve_critval(&uniform, 0, t_hat.max(1.0), alpha, Sides::Two, source)?;
    let points =
        estimates.iter().map(|e| CurvePoint { h: e.h, theta_hat: e.theta_hat, se: e.se, n_eff: None }).collect();
    let curve = EstimateCurve::new(points, uniform, 0, "ate-trim")?;
    Ok(AteBand { estimates, t_hat, band: band_with_critval(curve, alpha, Sides::Two, c) })
}

/// Trimmed-ATE band over sorted trimming levels `h_values ⊂ [0, 0.5)`.
pub fn ate_trim_band(
    data: &[AteSample],
    h_values: &[f64],
    alpha: f64,
    source: CritValSource<'_>,
) -> Result<AteBand, TreatmentError> {
    validate_ate(data)?;
    if h_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(TreatmentError::Invalid("trimming levels must be strictly increasing".into()));
    }
    let estimates = h_values.iter().map(|&h| ate_trim_estimate(data, h)).collect::<Result<Vec<_>, _>>()?;
    ate_band_from_summaries(estimates, alpha, source)
}
