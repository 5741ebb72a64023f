//! Critical values from the supremum of the limiting Gaussian process.
//!
//! The process `H(h)` has correlation `√(h'/h) ∫k(u h'/h)k(u)du / ∫k²` for
//! `h' <= h`, which depends only on the ratio of bandwidths. We discretise
//! `[1, t]` on a log-uniform grid and draw `sup H` (or `sup |H|`) by Monte
//! Carlo. On a log-uniform grid the correlation matrix is Toeplitz, so paths
//! come from a circulant embedding with two paths per FFT; a pivoted Cholesky
//! factor is the fallback for irregular grids or embeddings that are not
//! nonnegative definite. Each pair of replications owns a ChaCha8 stream keyed
//! by `(seed, pair index)`, so results do not depend on how rayon schedules
//! the work.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::kernels::{EvBranch, KernelSpec};

pub const DEFAULT_GRID_PER_LOG: usize = 300;
pub const MIN_GRID_POINTS: usize = 50;
pub const DEFAULT_REPS_INTERACTIVE: usize = 20_000;
pub const DEFAULT_REPS_TABLE: usize = 100_000;

/// Pivots below this are treated as exhausted rank.
const PIVOT_TOL: f64 = 1e-12;
/// Remaining diagonal more negative than this means the matrix is not PSD.
const NEGATIVE_PIVOT_TOL: f64 = -1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CritValError {
    #[error("Cholesky factorisation failed: remaining diagonal {pivot:e} at step {step}")]
    CholeskyFailure { step: usize, pivot: f64 },
    #[error("extreme-value approximation undefined: {0}")]
    DomainError(String),
    #[error("invalid critical-value request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sides {
    One,
    Two,
}

impl Sides {
    pub fn as_str(self) -> &'static str {
        match self {
            Sides::One => "one",
            Sides::Two => "two",
        }
    }

    /// Standard normal critical value at level `alpha`.
    pub fn normal_quantile(self, alpha: f64) -> f64 {
        let n = Normal::standard();
        match self {
            Sides::One => n.inverse_cdf(1.0 - alpha),
            Sides::Two => n.inverse_cdf(1.0 - alpha / 2.0),
        }
    }
}

impl fmt::Display for Sides {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Sides {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "1" => Ok(Sides::One),
            "two" | "2" => Ok(Sides::Two),
            _ => Err(format!("sides must be `one` or `two`, got `{s}`")),
        }
    }
}

/// Bandwidth nodes on `[origin, origin·t]`, sorted increasingly.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub ratio_t: f64,
    pub nodes: Vec<f64>,
}

impl GridSpec {
    /// Number of nodes used for ratio `t` at `per_log` points per unit of `log t`.
    pub fn default_points(t: f64, per_log: usize) -> usize {
        if t <= 1.0 {
            1
        } else {
            ((per_log as f64 * t.ln()).ceil() as usize + 1).max(MIN_GRID_POINTS)
        }
    }

    pub fn for_ratio(t: f64, per_log: usize) -> Result<Self, CritValError> {
        Self::log_uniform(1.0, t, Self::default_points(t, per_log))
    }

    /// `n_points` log-uniform nodes from `origin` to `origin·t`. A ratio of one
    /// collapses to a single node.
    pub fn log_uniform(origin: f64, t: f64, n_points: usize) -> Result<Self, CritValError> {
        if !(t.is_finite() && t >= 1.0) {
            return Err(CritValError::InvalidRequest(format!("ratio must be ≥ 1, got {t}")));
        }
        if !(origin.is_finite() && origin > 0.0) {
            return Err(CritValError::InvalidRequest("grid origin must be positive".into()));
        }
        if t == 1.0 {
            return Ok(GridSpec { ratio_t: 1.0, nodes: vec![origin] });
        }
        if n_points < 2 {
            return Err(CritValError::InvalidRequest("grid needs at least two points".into()));
        }
        let step = t.ln() / (n_points - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_points).map(|i| origin * (step * i as f64).exp()).collect();
        nodes[n_points - 1] = origin * t;
        Ok(GridSpec { ratio_t: t, nodes })
    }

    /// Index of the node closest to `origin·t` in log scale.
    pub fn nearest_node(&self, t: f64) -> usize {
        let target = (self.nodes[0] * t).ln();
        let mut best = 0;
        for (i, h) in self.nodes.iter().enumerate() {
            if (h.ln() - target).abs() < (self.nodes[best].ln() - target).abs() {
                best = i;
            }
        }
        best
    }

    /// Common log step when the nodes are log-uniform.
    fn log_step(&self) -> Option<f64> {
        if self.nodes.len() < 2 {
            return None;
        }
        // taken from the ratio alone so that the sampler ignores the origin
        let step = self.ratio_t.ln() / (self.nodes.len() - 1) as f64;
        let uniform = self.nodes.windows(2).all(|w| ((w[1] / w[0]).ln() - step).abs() <= 1e-9 * step.max(1e-300));
        uniform.then_some(step)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Correlation matrix of the process at the grid nodes.
pub fn build_covariance(k: &KernelSpec, grid: &GridSpec) -> DMatrix<f64> {
    let n = grid.len();
    let mut sigma = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (grid.nodes[i], grid.nodes[j]);
            let rho = k.gp_correlation(a.min(b) / a.max(b));
            sigma[(i, j)] = rho;
            sigma[(j, i)] = rho;
        }
    }
    sigma
}

/// Low-rank factor `Σ ≈ L Lᵀ` from a diagonally pivoted Cholesky decomposition.
///
/// Rows are stored in pivot order; row `k` has at most `min(k + 1, rank)`
/// nonzeros, and `perm[k]` is the grid node it belongs to.
#[derive(Debug, Clone)]
pub struct GpFactor {
    n: usize,
    rank: usize,
    perm: Vec<usize>,
    offsets: Vec<usize>,
    packed: Vec<f64>,
}

impl GpFactor {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self, CritValError> {
        let n = sigma.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut diag: Vec<f64> = (0..n).map(|i| sigma[(i, i)]).collect();
        // rows[node] holds L entries for that node, column by column
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut rank = 0;
        for step in 0..n {
            let (p, &best) =
                perm[step..].iter().map(|&node| &diag[node]).enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            if best < PIVOT_TOL {
                if let Some(&worst) = perm[step..].iter().map(|&node| &diag[node]).min_by(|a, b| a.total_cmp(b)) {
                    if worst < NEGATIVE_PIVOT_TOL {
                        return Err(CritValError::CholeskyFailure { step, pivot: worst });
                    }
                }
                break;
            }
            perm.swap(step, step + p);
            let pivot = perm[step];
            let l_kk = best.sqrt();
            let pivot_row = std::mem::take(&mut rows[pivot]);
            for &node in &perm[step + 1..] {
                let row = &mut rows[node];
                let dot: f64 = row.iter().zip(&pivot_row).map(|(a, b)| a * b).sum();
                let l = (sigma[(node, pivot)] - dot) / l_kk;
                row.push(l);
                diag[node] -= l * l;
            }
            let mut pivot_row = pivot_row;
            pivot_row.push(l_kk);
            rows[pivot] = pivot_row;
            rank += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut packed = Vec::new();
        for &node in &perm {
            offsets.push(packed.len());
            let row = &rows[node];
            let len = row.len().min(rank);
            packed.extend_from_slice(&row[..len]);
        }
        offsets.push(packed.len());
        Ok(GpFactor { n, rank, perm, offsets, packed })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Writes `L z` into `out`, indexed by grid node.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (k, &node) in self.perm.iter().enumerate() {
            let row = &self.packed[self.offsets[k]..self.offsets[k + 1]];
            out[node] = row.iter().zip(z).map(|(a, b)| a * b).sum();
        }
    }
}

/// Relative size of negative circulant eigenvalues that are clamped to zero.
const EMBEDDING_NEG_TOL: f64 = 1e-10;

/// How sample paths are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// One node: the path is a single standard normal.
    Point,
    /// Circulant embedding of the given size.
    Circulant { size: usize },
    /// Pivoted Cholesky factor of the given rank.
    Cholesky { rank: usize },
}

struct Circulant {
    n: usize,
    scale: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Circulant {
    fn new(k: &KernelSpec, n: usize, step: f64) -> Option<Self> {
        let mut m = (2 * (n - 1)).next_power_of_two();
        let mut planner = FftPlanner::new();
        // Smooth kernels need a long lag span before the embedding is
        // nonnegative; stop once an FFT would cost more than a dense factor.
        let dense_cost = (n * n) as f64 / 2.0;
        while 2.5 * m as f64 * (m as f64).log2() <= dense_cost {
            let mut c: Vec<Complex<f64>> = (0..m)
                .map(|j| {
                    let lag = j.min(m - j) as f64 * step;
                    Complex::new(k.gp_correlation((-lag).exp()), 0.0)
                })
                .collect();
            let fft = planner.plan_fft_forward(m);
            fft.process(&mut c);
            let max = c.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            if min >= -EMBEDDING_NEG_TOL * max {
                let scale = c.iter().map(|z| (z.re.max(0.0) / m as f64).sqrt()).collect();
                return Some(Circulant { n, scale, fft });
            }
            m *= 2;
        }
        None
    }
}

enum PathSampler {
    Point,
    Circulant(Circulant),
    Cholesky(GpFactor),
}

#[derive(Default)]
struct Scratch {
    z: Vec<f64>,
    buf: Vec<Complex<f64>>,
    fft: Vec<Complex<f64>>,
}

impl PathSampler {
    fn new(k: &KernelSpec, grid: &GridSpec) -> Result<Self, CritValError> {
        if grid.len() == 1 {
            return Ok(PathSampler::Point);
        }
        if let Some(step) = grid.log_step() {
            if let Some(c) = Circulant::new(k, grid.len(), step) {
                return Ok(PathSampler::Circulant(c));
            }
            log::debug!("circulant embedding not nonnegative, using Cholesky");
            // the covariance depends on node ratios only, so factor the grid
            // rebased at one and get the same draws for every origin
            let canonical = GridSpec::log_uniform(1.0, grid.ratio_t, grid.len())?;
            return Ok(PathSampler::Cholesky(GpFactor::new(&build_covariance(k, &canonical))?));
        }
        Ok(PathSampler::Cholesky(GpFactor::new(&build_covariance(k, grid))?))
    }

    fn kind(&self) -> SamplerKind {
        match self {
            PathSampler::Point => SamplerKind::Point,
            PathSampler::Circulant(c) => SamplerKind::Circulant { size: c.scale.len() },
            PathSampler::Cholesky(f) => SamplerKind::Cholesky { rank: f.rank() },
        }
    }

    /// Two independent paths, written into `a` and `b`.
    fn draw_pair(&self, rng: &mut ChaCha8Rng, s: &mut Scratch, a: &mut [f64], b: &mut [f64]) {
        match self {
            PathSampler::Point => {
                a[0] = StandardNormal.sample(rng);
                b[0] = StandardNormal.sample(rng);
            }
            PathSampler::Circulant(c) => {
                s.buf.clear();
                for &w in &c.scale {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    s.buf.push(Complex::new(w * re, w * im));
                }
                s.fft.resize(c.fft.get_inplace_scratch_len(), Complex::new(0.0, 0.0));
                c.fft.process_with_scratch(&mut s.buf, &mut s.fft);
                for (i, v) in s.buf[..c.n].iter().enumerate() {
                    a[i] = v.re;
                    b[i] = v.im;
                }
            }
            PathSampler::Cholesky(f) => {
                s.z.resize(f.rank(), 0.0);
                for out in [a, b] {
                    for zi in s.z.iter_mut() {
                        *zi = StandardNormal.sample(rng);
                    }
                    f.apply(&s.z, out);
                }
            }
        }
    }
}

fn pair_rng(seed: u64, pair: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pair as u64);
    rng
}

fn running_sup_at(path: &[f64], knots: &[usize], last: usize, sides: Sides, out: &mut Vec<f64>) {
    let mut m = f64::NEG_INFINITY;
    let mut running = Vec::with_capacity(last + 1);
    for &v in &path[..=last] {
        let v = match sides {
            Sides::One => v,
            Sides::Two => v.abs(),
        };
        if v > m {
            m = v;
        }
        running.push(m);
    }
    out.extend(knots.iter().map(|&i| running[i]));
}

/// Runs `n_reps` replications of the process and, for each, records the
/// running supremum at every node listed in `knots` (node indices, any order).
/// Returns one vector of draws per knot.
fn simulate_running_sup(
    sampler: &PathSampler,
    n: usize,
    knots: &[usize],
    n_reps: usize,
    seed: u64,
    sides: Sides,
) -> Vec<Vec<f64>> {
    let last = knots.iter().copied().max().unwrap_or(0);
    let per_pair: Vec<Vec<f64>> = (0..n_reps.div_ceil(2))
        .into_par_iter()
        .map_init(
            || (Scratch::default(), vec![0.0; n], vec![0.0; n]),
            |(scratch, a, b), pair| {
                let mut rng = pair_rng(seed, pair);
                sampler.draw_pair(&mut rng, scratch, a, b);
                let mut out = Vec::with_capacity(2 * knots.len());
                running_sup_at(a, knots, last, sides, &mut out);
                running_sup_at(b, knots, last, sides, &mut out);
                out
            },
        )
        .collect();
    (0..knots.len())
        .map(|j| {
            let mut draws = Vec::with_capacity(n_reps);
            for (pair, row) in per_pair.iter().enumerate() {
                draws.push(row[j]);
                if 2 * pair + 1 < n_reps {
                    draws.push(row[knots.len() + j]);
                }
            }
            draws
        })
        .collect()
}

/// Draws of `sup H` (one-sided) or `sup |H|` (two-sided) over the grid.
pub fn simulate_sup(
    k: &KernelSpec,
    grid: &GridSpec,
    n_reps: usize,
    seed: u64,
    sides: Sides,
) -> Result<Vec<f64>, CritValError> {
    let sampler = PathSampler::new(k, grid)?;
    Ok(simulate_running_sup(&sampler, grid.len(), &[grid.len() - 1], n_reps, seed, sides).pop().unwrap())
}

/// Raw sample paths, one row per replication. Intended for diagnostics.
pub fn simulate_paths(
    k: &KernelSpec,
    grid: &GridSpec,
    n_reps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, CritValError> {
    let sampler = PathSampler::new(k, grid)?;
    let n = grid.len();
    let mut out = Vec::with_capacity(n_reps);
    let mut scratch = Scratch::default();
    for pair in 0..n_reps.div_ceil(2) {
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        sampler.draw_pair(&mut pair_rng(seed, pair), &mut scratch, &mut a, &mut b);
        out.push(a);
        if out.len() < n_reps {
            out.push(b);
        }
    }
    Ok(out)
}

/// Simulated draws for several ratios sharing one path per replication, so the
/// draws are nested: every draw is nondecreasing in the ratio. The grid covers
/// the largest ratio and every other ratio is read at its nearest node.
#[derive(Debug, Clone)]
pub struct LadderDraws {
    pub ratios: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
    pub sampler: SamplerKind,
    pub n_nodes: usize,
}

impl LadderDraws {
    pub fn simulate(
        k: &KernelSpec,
        ratios: &[f64],
        per_log: usize,
        n_reps: usize,
        seed: u64,
        sides: Sides,
    ) -> Result<Self, CritValError> {
        if ratios.is_empty() {
            return Ok(LadderDraws { ratios: Vec::new(), draws: Vec::new(), sampler: SamplerKind::Point, n_nodes: 0 });
        }
        if let Some(bad) = ratios.iter().find(|t| !(t.is_finite() && **t >= 1.0)) {
            return Err(CritValError::InvalidRequest(format!("ratio must be ≥ 1, got {bad}")));
        }
        let t_max = ratios.iter().copied().fold(1.0, f64::max);
        let grid = GridSpec::for_ratio(t_max, per_log)?;
        let index: Vec<usize> = ratios.iter().map(|&t| grid.nearest_node(t)).collect();
        let sampler = PathSampler::new(k, &grid)?;
        let draws = simulate_running_sup(&sampler, grid.len(), &index, n_reps, seed, sides);
        Ok(LadderDraws { ratios: ratios.to_vec(), draws, sampler: sampler.kind(), n_nodes: grid.len() })
    }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of an empty sample");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maritz–Jarrett standard error of the `p` quantile.
pub fn maritz_jarrett_se(sorted: &[f64], p: f64) -> f64 {
    use statrs::function::beta::beta_reg;
    let n = sorted.len();
    let m = ((p * n as f64) + 0.5).floor() as usize;
    if m < 2 || m >= n {
        return f64::NAN;
    }
    let a = (m - 1) as f64;
    let b = (n - m) as f64;
    let nf = n as f64;
    let spread = (nf * p * (1.0 - p)).sqrt();
    let width = (12.0 * spread).ceil() as usize + 10;
    let lo = m.saturating_sub(width).max(1);
    let hi = (m + width).min(n);
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    let mut prev = beta_reg(a, b, (lo - 1) as f64 / nf);
    for i in lo..=hi {
        let cur = beta_reg(a, b, i as f64 / nf);
        let w = cur - prev;
        prev = cur;
        let x = sorted[i - 1];
        c1 += w * x;
        c2 += w * x * x;
    }
    (c2 - c1 * c1).max(0.0).sqrt()
}

fn sorted_copy(draws: &[f64]) -> Vec<f64> {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CritValRequest {
    /// Kernel of the limiting process (already the equivalent kernel).
    pub kernel: KernelSpec,
    pub ratio_t: f64,
    pub alpha: f64,
    pub sides: Sides,
    pub n_reps: usize,
    pub grid_per_log: usize,
    pub seed: u64,
}

impl CritValRequest {
    pub fn new(kernel: KernelSpec, ratio_t: f64, alpha: f64, sides: Sides) -> Self {
        CritValRequest {
            kernel,
            ratio_t,
            alpha,
            sides,
            n_reps: DEFAULT_REPS_INTERACTIVE,
            grid_per_log: DEFAULT_GRID_PER_LOG,
            seed: 42,
        }
    }

    pub fn with_reps(mut self, n_reps: usize) -> Self {
        self.n_reps = n_reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_grid_per_log(mut self, per_log: usize) -> Self {
        self.grid_per_log = per_log;
        self
    }

    pub fn validate(&self) -> Result<(), CritValError> {
        let bad = |m: String| Err(CritValError::InvalidRequest(m));
        if !(self.ratio_t.is_finite() && self.ratio_t >= 1.0) {
            return bad("ratio must be ≥ 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha must lie in (0, 0.5], got {}", self.alpha));
        }
        if self.n_reps < 2 {
            return bad("at least two replications are needed".into());
        }
        if self.grid_per_log == 0 {
            return bad("grid density must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CritValResult {
    pub value: f64,
    pub mc_se: f64,
    pub request: CritValRequest,
    pub elapsed: Duration,
    pub n_nodes: usize,
    pub sampler: SamplerKind,
}

/// `1 − α` quantile of sorted ladder draws at `ratio`; at ratio one the
/// supremum is a single standard normal and its quantile is returned exactly.
pub fn ladder_quantile(ratio: f64, sorted: &[f64], alpha: f64, sides: Sides) -> f64 {
    if ratio == 1.0 {
        sides.normal_quantile(alpha)
    } else {
        quantile_type7(sorted, 1.0 - alpha)
    }
}

/// Simulated `1 − α` quantile of the supremum over `[1, t]`. At `t = 1` the
/// supremum is `|Z|` or `Z`, so the normal quantile is returned with zero
/// Monte Carlo error and no simulation.
pub fn critical_value(req: &CritValRequest) -> Result<CritValResult, CritValError> {
    req.validate()?;
    let start = Instant::now();
    if req.ratio_t == 1.0 {
        return Ok(CritValResult {
            value: req.sides.normal_quantile(req.alpha),
            mc_se: 0.0,
            request: req.clone(),
            elapsed: start.elapsed(),
            n_nodes: 1,
            sampler: SamplerKind::Point,
        });
    }
    let grid = GridSpec::for_ratio(req.ratio_t, req.grid_per_log)?;
    let sampler = PathSampler::new(&req.kernel, &grid)?;
    let draws =
        simulate_running_sup(&sampler, grid.len(), &[grid.len() - 1], req.n_reps, req.seed, req.sides).pop().unwrap();
    let sorted = sorted_copy(&draws);
    let p = 1.0 - req.alpha;
    Ok(CritValResult {
        value: quantile_type7(&sorted, p),
        mc_se: maritz_jarrett_se(&sorted, p),
        request: req.clone(),
        elapsed: start.elapsed(),
        n_nodes: grid.len(),
        sampler: sampler.kind(),
    })
}

/// Extreme-value approximation to the critical value for large `t`.
pub fn ev_approx_critval(k: &KernelSpec, t: f64, alpha: f64, sides: Sides) -> Result<f64, CritValError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CritValError::DomainError(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(t > std::f64::consts::E) {
        return Err(CritValError::DomainError(format!("log log t undefined or nonpositive for t = {t}")));
    }
    let ev = k.ev_constants();
    let loglog = t.ln().ln();
    let b = match ev.branch {
        EvBranch::BoundaryNonzero => {
            if t <= std::f64::consts::E.powf(std::f64::consts::E) {
                return Err(CritValError::DomainError(format!(
                    "log log log t must be positive for kernels with k(A) ≠ 0, t = {t}"
                )));
            }
            ev.constant.ln() + 0.5 * loglog.ln()
        }
        EvBranch::BoundaryZero => ev.constant.ln(),
    };
    let gumbel = match sides {
        Sides::Two => -(-0.5 * (1.0 - alpha).ln()).ln(),
        Sides::One => -(-(1.0 - alpha).ln()).ln(),
    };
    let scale = (2.0 * loglog).sqrt();
    Ok((gumbel + b) / scale + scale)
}

/// Simultaneous coverage of the band that uses critical value `z` at every
/// bandwidth: the empirical CDF of the supremum at `z`.
pub fn uncorrected_coverage(
    k: &KernelSpec,
    t: f64,
    z: f64,
    sides: Sides,
    n_reps: usize,
    grid_per_log: usize,
    seed: u64,
) -> Result<f64, CritValError> {
    let grid = GridSpec::for_ratio(t, grid_per_log)?;
    let draws = simulate_sup(k, &grid, n_reps, seed, sides)?;
    Ok(draws.iter().filter(|&&d| d <= z).count() as f64 / draws.len() as f64)
}

/// One column of a critical-value table.
#[derive(Debug, Clone)]
pub struct TableColumn {
    pub base: KernelSpec,
    pub order: usize,
    pub sides: Sides,
}

impl TableColumn {
    pub fn label(&self) -> String {
        format!("{}/r{}/{}", self.base.name(), self.order, self.sides)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub ratio: f64,
    pub kernel: String,
    pub order: usize,
    pub sides: Sides,
    pub alpha: f64,
    pub critval: f64,
    pub mc_se: f64,
}

/// Change in the largest-ratio critical value after doubling the grid density.
#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonCheck {
    pub column: String,
    pub alpha: f64,
    pub ratio: f64,
    pub base: f64,
    pub doubled: f64,
}

impl RichardsonCheck {
    pub fn change(&self) -> f64 {
        (self.doubled - self.base).abs()
    }

    pub fn passes(&self) -> bool {
        self.change() < 0.01
    }
}

#[derive(Debug, Clone)]
pub struct CritValTable {
    pub columns: Vec<String>,
    pub ratios: Vec<f64>,
    pub alphas: Vec<f64>,
    pub entries: Vec<TableEntry>,
    pub richardson: Vec<RichardsonCheck>,
}

#[derive(Debug, Clone, Copy)]
pub struct TableOptions {
    pub n_reps: usize,
    pub grid_per_log: usize,
    pub seed: u64,
    pub richardson: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions { n_reps: DEFAULT_REPS_TABLE, grid_per_log: DEFAULT_GRID_PER_LOG, seed: 42, richardson: true }
    }
}

pub const TABLE1_RATIOS: [f64; 17] =
    [1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 20.0, 50.0, 100.0];

/// Builds a table of critical values: one simulation per column, shared
/// across ratios and levels.
pub fn emit_table(
    columns: &[TableColumn],
    ratios: &[f64],
    alphas: &[f64],
    opts: TableOptions,
) -> Result<CritValTable, CritValError> {
    if let Some(bad) = ratios.iter().find(|t| !(t.is_finite() && **t >= 1.0)) {
        return Err(CritValError::InvalidRequest(format!("ratio must be ≥ 1, got {bad}")));
    }
    if opts.n_reps < 1000 {
        return Err(CritValError::InvalidRequest(format!(
            "tables need at least 1000 replications, got {}",
            opts.n_reps
        )));
    }
    let mut entries = Vec::new();
    let mut richardson = Vec::new();
    for col in columns {
        let k = crate::kernels::equivalent_kernel(&col.base, col.order)
            .map_err(|e| CritValError::InvalidRequest(e.to_string()))?
            .result;
        let ladder = LadderDraws::simulate(&k, ratios, opts.grid_per_log, opts.n_reps, opts.seed, col.sides)?;
        for (ratio, draws) in ratios.iter().zip(&ladder.draws) {
            let sorted = sorted_copy(draws);
            for &alpha in alphas {
                entries.push(TableEntry {
                    ratio: *ratio,
                    kernel: col.base.name().to_string(),
                    order: col.order,
                    sides: col.sides,
                    alpha,
                    critval: ladder_quantile(*ratio, &sorted, alpha, col.sides),
                    mc_se: if *ratio == 1.0 { 0.0 } else { maritz_jarrett_se(&sorted, 1.0 - alpha) },
                });
            }
        }
        if opts.richardson {
            if let Some(&t_max) = ratios.iter().max_by(|a, b| a.total_cmp(b)) {
                if t_max > 1.0 {
                    let fine =
                        LadderDraws::simulate(&k, &[t_max], 2 * opts.grid_per_log, opts.n_reps, opts.seed, col.sides)?;
                    let fine_sorted = sorted_copy(&fine.draws[0]);
                    let coarse_idx = ratios.iter().position(|&t| t == t_max).unwrap();
                    let coarse_sorted = sorted_copy(&ladder.draws[coarse_idx]);
                    for &alpha in alphas {
                        richardson.push(RichardsonCheck {
                            column: col.label(),
                            alpha,
                            ratio: t_max,
                            base: quantile_type7(&coarse_sorted, 1.0 - alpha),
                            doubled: quantile_type7(&fine_sorted, 1.0 - alpha),
                        });
                    }
                }
            }
        }
    }
    Ok(CritValTable {
        columns: columns.iter().map(TableColumn::label).collect(),
        ratios: ratios.to_vec(),
        alphas: alphas.to_vec(),
        entries,
        richardson,
    })
}

impl CritValTable {
    pub const CSV_HEADER: &'static str = "ratio,kernel,order,sides,alpha,critval,mc_se";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6}\n",
                e.ratio, e.kernel, e.order, e.sides, e.alpha, e.critval, e.mc_se
            ));
        }
        out
    }

    pub fn lookup(&self, ratio: f64, kernel: &str, order: usize, sides: Sides, alpha: f64) -> Option<&TableEntry> {
        self.entries.iter().find(|e| {
            e.ratio == ratio && e.kernel == kernel && e.order == order && e.sides == sides && e.alpha == alpha
        })
    }

    /// Aligned text: one row per ratio, one column per kernel/order/sides/level.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<(Sides, usize, String, f64)> = Vec::new();
        for e in &self.entries {
            let key = (e.sides, e.order, e.kernel.clone(), e.alpha);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let mut out = String::new();
        let mut header = format!("{:>7}", "h̄/h̲");
        for (sides, order, kernel, alpha) in &keys {
            let short: String = kernel.chars().take(4).collect();
            header.push_str(&format!("  {:>14}", format!("{sides}/r{order}/{short}/{alpha}")));
        }
        out.push_str(header.trim_end());
        out.push('\n');
        for &ratio in &self.ratios {
            let mut line = format!("{ratio:>7.1}");
            for (sides, order, kernel, alpha) in &keys {
                match self.lookup(ratio, kernel, *order, *sides, *alpha) {
                    Some(e) => line.push_str(&format!("  {:>14.2}", e.critval)),
                    None => line.push_str(&format!("  {:>14}", "")),
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_log_uniform() {
        let g = GridSpec::for_ratio(10.0, 300).unwrap();
        assert_eq!(g.nodes[0], 1.0);
        assert_eq!(*g.nodes.last().unwrap(), 10.0);
        let steps: Vec<f64> = g.nodes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-12);
        }
        assert_eq!(GridSpec::for_ratio(1.0, 300).unwrap().len(), 1);
        assert_eq!(GridSpec::for_ratio(1.01, 300).unwrap().len(), MIN_GRID_POINTS);
        assert!(GridSpec::for_ratio(0.5, 300).is_err());
    }

    #[test]
    fn nearest_node_in_log_scale() {
        let g = GridSpec::for_ratio(10.0, 100).unwrap();
        assert_eq!(g.nearest_node(1.0), 0);
        assert_eq!(g.nearest_node(10.0), g.len() - 1);
        let i = g.nearest_node(2.0);
        assert!((g.nodes[i].ln() - 2f64.ln()).abs() <= 0.5 * (g.nodes[1].ln()) + 1e-12);
    }

    #[test]
    fn circulant_paths_have_target_covariance() {
        let k = KernelSpec::triangular();
        let g = GridSpec::for_ratio(100.0, 300).unwrap();
        let sampler = PathSampler::new(&k, &g).unwrap();
        assert!(matches!(sampler.kind(), SamplerKind::Circulant { .. }));
        let paths = simulate_paths(&k, &g, 10_000, 3).unwrap();
        let sigma = build_covariance(&k, &g);
        let n = g.len();
        for (i, j) in [(0, 0), (0, 300), (500, 520), (n - 1, n - 1)] {
            let emp: f64 = paths.iter().map(|p| p[i] * p[j]).sum::<f64>() / paths.len() as f64;
            assert!((emp - sigma[(i, j)]).abs() < 0.06, "({i},{j}): {emp} vs {}", sigma[(i, j)]);
        }
    }

    #[test]
    fn irregular_grid_uses_cholesky() {
        let g = GridSpec { ratio_t: 3.0, nodes: vec![1.0, 1.1, 1.5, 3.0] };
        let s = PathSampler::new(&KernelSpec::uniform(), &g).unwrap();
        assert!(matches!(s.kind(), SamplerKind::Cholesky { rank: 4 }));
    }

    #[test]
    fn odd_replication_count() {
        let g = GridSpec::for_ratio(2.0, 30).unwrap();
        let d = simulate_sup(&KernelSpec::uniform(), &g, 7, 1, Sides::Two).unwrap();
        assert_eq!(d.len(), 7);
        let paths = simulate_paths(&KernelSpec::uniform(), &g, 7, 1).unwrap();
        let sups: Vec<f64> = paths.iter().map(|p| p.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        assert_eq!(d, sups);
    }

    #[test]
    fn covariance_uniform_two_nodes() {
        let g = GridSpec { ratio_t: 4.0, nodes: vec![1.0, 4.0] };
        let s = build_covariance(&KernelSpec::uniform(), &g);
        assert!((s[(0, 1)] - 0.5).abs() < 1e-15);
        assert_eq!(s[(0, 0)], 1.0);
        assert_eq!(s[(1, 1)], 1.0);
    }

    #[test]
    fn factor_reproduces_covariance() {
        for k in [KernelSpec::uniform(), KernelSpec::triangular()] {
            let g = GridSpec::for_ratio(3.0, 40).unwrap();
            let s = build_covariance(&k, &g);
            let f = GpFactor::new(&s).unwrap();
            // reconstruct L from unit vectors
            let n = g.len();
            let mut l = DMatrix::zeros(n, f.rank());
            let mut col = vec![0.0; n];
            for j in 0..f.rank() {
                let mut e = vec![0.0; f.rank()];
                e[j] = 1.0;
                f.apply(&e, &mut col);
                for i in 0..n {
                    l[(i, j)] = col[i];
                }
            }
            let err = (&l * l.transpose() - &s).amax();
            assert!(err < 1e-10, "{}: {err}", k.name());
        }
    }

    #[test]
    fn not_psd_is_rejected() {
        let mut s = DMatrix::identity(2, 2);
        s[(0, 1)] = 1.5;
        s[(1, 0)] = 1.5;
        assert!(matches!(GpFactor::new(&s), Err(CritValError::CholeskyFailure { .. })));
    }

    #[test]
    fn type7_quantile() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&s, 0.0), 1.0);
        assert_eq!(quantile_type7(&s, 1.0), 4.0);
        assert!((quantile_type7(&s, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn ev_domain() {
        let u = KernelSpec::uniform();
        assert!(ev_approx_critval(&u, 2.0, 0.05, Sides::Two).is_err());
        assert!(ev_approx_critval(&u, 10.0, 0.05, Sides::Two).is_err());
        assert!(ev_approx_critval(&KernelSpec::triangular(), 10.0, 0.05, Sides::Two).is_ok());
        assert!(ev_approx_critval(&u, 100.0, 0.05, Sides::Two).is_ok());
    }

    #[test]
    fn request_validation() {
        let r = CritValRequest::new(KernelSpec::uniform(), 0.5, 0.05, Sides::Two);
        assert!(r.validate().is_err());
        let r = CritValRequest::new(KernelSpec::uniform(), 2.0, 0.7, Sides::Two);
        assert!(r.validate().is_err());
    }
}
