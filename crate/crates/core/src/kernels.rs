//! Kernels as exact piecewise polynomials.
//!
//! A [`KernelSpec`] stores `k(u)` for `u >= 0` as a list of polynomial pieces in
//! `|u|` and is extended to negative arguments by symmetry. Every integral the
//! rest of the crate needs (moments, `∫k²`, the overlap `∫k(au)k(u)du`, and the
//! derivative functional behind the extreme-value constant) is evaluated from
//! antiderivatives, so critical values carry no quadrature error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::poly::Poly;

/// Highest polynomial degree allowed in a kernel piece.
pub const MAX_DEGREE: usize = 12;

const SINGULAR_DET_TOL: f64 = 1e-14;
const SOLVE_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("moment matrix is singular for order {order} (|det M| = {det:e})")]
    SingularMoments { order: usize, det: f64 },
    #[error("invalid kernel: {0}")]
    Invalid(String),
    #[error("unknown kernel `{0}` (expected uniform, triangular or epanechnikov)")]
    UnknownKernel(String),
    #[error("kernel config line {line}: {msg}")]
    Config { line: usize, msg: String },
}

/// One polynomial piece of a kernel on `[lo, hi] ⊂ [0, A]`, in powers of `|u|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub poly: Poly,
}

/// A symmetric kernel with compact support `[-A, A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    name: String,
    support: f64,
    pieces: Vec<Piece>,
}

/// Which extreme-value constant applies to a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvBranch {
    /// `k(A) != 0`; the constant is `c1(k)`.
    BoundaryNonzero,
    /// `k(A) == 0`; the constant is `c2(k)`.
    BoundaryZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvConstants {
    pub branch: EvBranch,
    /// `c1(k)` or `c2(k)` depending on `branch`.
    pub constant: f64,
}

impl KernelSpec {
    /// Builds a kernel from pieces given in `|u|`. Pieces must be ordered,
    /// non-overlapping and lie inside `[0, support]`.
    pub fn new(name: impl Into<String>, support: f64, pieces: Vec<(f64, f64, Vec<f64>)>) -> Result<Self, KernelError> {
        let name = name.into();
        if !(support.is_finite() && support > 0.0) {
            return Err(KernelError::Invalid(format!("support must be positive and finite, got {support}")));
        }
        if pieces.is_empty() {
            return Err(KernelError::Invalid("kernel has no pieces".into()));
        }
        let mut out = Vec::with_capacity(pieces.len());
        let mut prev_hi = 0.0;
        for (lo, hi, coeffs) in pieces {
            if !(lo.is_finite() && hi.is_finite()) || lo < prev_hi || hi <= lo || hi > support {
                return Err(KernelError::Invalid(format!(
                    "piece [{lo}, {hi}] is not an ordered sub-interval of [0, {support}]"
                )));
            }
            if coeffs.iter().any(|c| !c.is_finite()) {
                return Err(KernelError::Invalid("non-finite coefficient".into()));
            }
            let poly = Poly::new(coeffs);
            if poly.degree() > MAX_DEGREE {
                return Err(KernelError::Invalid(format!("piece degree {} exceeds {MAX_DEGREE}", poly.degree())));
            }
            prev_hi = hi;
            out.push(Piece { lo, hi, poly });
        }
        let k = KernelSpec { name, support, pieces: out };
        if k.moment(0, false).abs() <= 1e-9 {
            return Err(KernelError::Invalid("kernel integrates to zero".into()));
        }
        Ok(k)
    }

    /// `½·1(|u| ≤ 1)`
    pub fn uniform() -> Self {
        Self::new("uniform", 1.0, vec![(0.0, 1.0, vec![0.5])]).unwrap()
    }

    /// `(1 − |u|)₊`
    pub fn triangular() -> Self {
        Self::new("triangular", 1.0, vec![(0.0, 1.0, vec![1.0, -1.0])]).unwrap()
    }

    /// `¾(1 − u²)₊`
    pub fn epanechnikov() -> Self {
        Self::new("epanechnikov", 1.0, vec![(0.0, 1.0, vec![0.75, 0.0, -0.75])]).unwrap()
    }

    pub fn builtin(name: &str) -> Result<Self, KernelError> {
        match name.to_ascii_lowercase().as_str() {
            "uniform" | "unif" | "rectangular" => Ok(Self::uniform()),
            "triangular" | "tri" | "triangle" => Ok(Self::triangular()),
            "epanechnikov" | "epa" => Ok(Self::epanechnikov()),
            _ => Err(KernelError::UnknownKernel(name.to_string())),
        }
    }

    /// Parses the key-value kernel config format:
    ///
    /// ```text
    /// # comment
    /// name = biweight
    /// support = 1
    /// [0, 1]: 0.9375 0 -1.875 0 0.9375
    /// ```
    pub fn parse_config(text: &str) -> Result<Self, KernelError> {
        let mut name = None;
        let mut support = None;
        let mut pieces = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cfg_err = |msg: String| KernelError::Config { line: line_no, msg };
            if let Some(rest) = line.strip_prefix('[') {
                let (interval, coeffs) =
                    rest.split_once("]:").ok_or_else(|| cfg_err("expected `[lo,hi]: c0 c1 ...`".into()))?;
                let (lo, hi) =
                    interval.split_once(',').ok_or_else(|| cfg_err("interval needs two endpoints".into()))?;
                let parse = |s: &str| {
                    s.trim().parse::<f64>().map_err(|_| cfg_err(format!("cannot parse number `{}`", s.trim())))
                };
                let lo = parse(lo)?;
                let hi = parse(hi)?;
                let coeffs = coeffs.split_whitespace().map(parse).collect::<Result<Vec<_>, _>>()?;
                if coeffs.is_empty() {
                    return Err(cfg_err("piece has no coefficients".into()));
                }
                pieces.push((lo, hi, coeffs));
            } else if let Some((key, value)) = line.split_once(['=', ':']) {
                match key.trim() {
                    "name" => name = Some(value.trim().to_string()),
                    "support" => {
                        support = Some(
                            value
                                .trim()
                                .parse::<f64>()
                                .map_err(|_| cfg_err(format!("cannot parse support `{}`", value.trim())))?,
                        )
                    }
                    other => return Err(cfg_err(format!("unknown key `{other}`"))),
                }
            } else {
                return Err(cfg_err(format!("unrecognised line `{line}`")));
            }
        }
        let name = name.unwrap_or_else(|| "custom".to_string());
        let support = support.ok_or(KernelError::Config { line: 0, msg: "missing `support`".into() })?;
        Self::new(name, support, pieces)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Half-width `A` of the support.
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn eval(&self, u: f64) -> f64 {
        let a = u.abs();
        if a > self.support {
            return 0.0;
        }
        self.pieces.iter().find(|p| p.lo <= a && a <= p.hi).map_or(0.0, |p| p.poly.eval(a))
    }

    /// Value at the support edge, `k(A)`.
    pub fn edge_value(&self) -> f64 {
        self.pieces.iter().rev().find(|p| p.hi >= self.support).map_or(0.0, |p| p.poly.eval(self.support))
    }

    /// `∫₀^A uʲ k(u) du` when `one_sided`, otherwise `∫_{-A}^{A} uʲ k(u) du`.
    pub fn moment(&self, j: usize, one_sided: bool) -> f64 {
        let half: f64 = self.pieces.iter().map(|p| p.poly.shift_up(j).integrate(p.lo, p.hi)).sum();
        match (one_sided, j % 2) {
            (true, _) => half,
            (false, 0) => 2.0 * half,
            (false, _) => 0.0,
        }
    }

    /// `∫ k(u)² du` over the whole line.
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.pieces.iter().map(|p| (&p.poly * &p.poly).integrate(p.lo, p.hi)).sum::<f64>()
    }

    /// `∫ k(a u) k(u) du` over the whole line, for `0 < a <= 1`.
    pub fn overlap(&self, a: f64) -> f64 {
        assert!(a > 0.0 && a <= 1.0, "overlap ratio must lie in (0, 1], got {a}");
        let mut half = 0.0;
        for outer in &self.pieces {
            // k(a u) is outer.poly(a u) for u in [lo / a, hi / a]
            let lo_s = outer.lo / a;
            let hi_s = outer.hi / a;
            let scaled = outer.poly.rescale(a);
            for inner in &self.pieces {
                let lo = lo_s.max(inner.lo);
                let hi = hi_s.min(inner.hi);
                if hi > lo {
                    half += (&scaled * &inner.poly).integrate(lo, hi);
                }
            }
        }
        2.0 * half
    }

    /// Correlation of the limiting process between bandwidths `h' = a h` and `h`.
    pub fn gp_correlation(&self, a: f64) -> f64 {
        if a >= 1.0 {
            return 1.0;
        }
        a.sqrt() * self.overlap(a) / self.l2_norm_sq()
    }

    /// Extreme-value constant `c1(k)` (when `k(A) != 0`) or `c2(k)`.
    pub fn ev_constants(&self) -> EvConstants {
        let l2 = self.l2_norm_sq();
        let edge = self.edge_value();
        if edge != 0.0 {
            EvConstants {
                branch: EvBranch::BoundaryNonzero,
                constant: self.support * edge * edge / (std::f64::consts::PI.sqrt() * l2),
            }
        } else {
            // ∫ [k'(u) u + k(u)/2]² du, integrand even in u
            let half = Poly::constant(0.5);
            let num: f64 = 2.0
                * self
                    .pieces
                    .iter()
                    .map(|p| {
                        let g = &p.poly.derivative().shift_up(1) + &(&p.poly * &half);
                        (&g * &g).integrate(p.lo, p.hi)
                    })
                    .sum::<f64>();
            EvConstants { branch: EvBranch::BoundaryZero, constant: (num / l2).sqrt() / (2.0 * std::f64::consts::PI) }
        }
    }

    /// Multiplies every piece by a polynomial in `|u|`.
    fn times_poly(&self, name: String, factor: &Poly) -> Result<KernelSpec, KernelError> {
        let pieces = self.pieces.iter().map(|p| (p.lo, p.hi, (&p.poly * factor).coeffs().to_vec())).collect();
        KernelSpec::new(name, self.support, pieces)
    }
}

/// Boundary equivalent kernel of an order-`r` local polynomial fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentKernel {
    pub base: KernelSpec,
    pub order: usize,
    pub boundary: bool,
    pub result: KernelSpec,
}

/// Coefficients of `e₁'M⁻¹p(u)` where `M_ij = μ_{i+j}` are one-sided moments of `kstar`.
pub fn boundary_weights(kstar: &KernelSpec, r: usize) -> Result<Vec<f64>, KernelError> {
    let dim = r + 1;
    let moments: Vec<f64> = (0..2 * dim - 1).map(|j| kstar.moment(j, true)).collect();
    let m = DMatrix::from_fn(dim, dim, |i, j| moments[i + j]);
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET_TOL {
        return Err(KernelError::SingularMoments { order: r, det });
    }
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let x = lu.solve(&e1).ok_or(KernelError::SingularMoments { order: r, det })?;
    let residual = (&m * &x - &e1).amax();
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(KernelError::SingularMoments { order: r, det });
    }
    Ok(x.iter().copied().collect())
}

/// The kernel `e₁'M⁻¹p(|u|)k*(u)` for every order, including `r = 0`
/// (where it is `k*/μ₀`). It integrates to one over `[0, A]`.
pub fn normalized_boundary_kernel(kstar: &KernelSpec, r: usize) -> Result<KernelSpec, KernelError> {
    let w = boundary_weights(kstar, r)?;
    kstar.times_poly(format!("{}-r{}", kstar.name(), r), &Poly::new(w))
}

/// Equivalent kernel of an order-`r` fit at a boundary. Order 0 returns the
/// base kernel unchanged.
pub fn equivalent_kernel(kstar: &KernelSpec, r: usize) -> Result<EquivalentKernel, KernelError> {
    let result = if r == 0 { kstar.clone() } else { normalized_boundary_kernel(kstar, r)? };
    Ok(EquivalentKernel { base: kstar.clone(), order: r, boundary: true, result })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn builtin_closed_forms() {
        let u = KernelSpec::uniform();
        let t = KernelSpec::triangular();
        let e = KernelSpec::epanechnikov();
        for i in 0..=40 {
            let x = -1.2 + 0.06 * i as f64;
            let inside = x.abs() <= 1.0;
            assert_eq!(u.eval(x), if inside { 0.5 } else { 0.0 });
            assert!(close(t.eval(x), (1.0 - x.abs()).max(0.0), 1e-15));
            assert!(close(e.eval(x), 0.75 * (1.0 - x * x).max(0.0), 1e-15));
            assert_eq!(t.eval(x), t.eval(-x));
        }
    }

    #[test]
    fn moments_match_table() {
        let u = KernelSpec::uniform();
        let t = KernelSpec::triangular();
        let e = KernelSpec::epanechnikov();
        let expect = [
            (&u, [0.5, 0.25, 1.0 / 6.0, 0.125, 0.1]),
            (&t, [0.5, 1.0 / 6.0, 1.0 / 12.0, 1.0 / 20.0, 1.0 / 30.0]),
            (&e, [0.5, 3.0 / 16.0, 0.1, 1.0 / 16.0, 3.0 / 70.0]),
        ];
        for (k, mu) in expect {
            for (j, m) in mu.iter().enumerate() {
                assert!(close(k.moment(j, true), *m, 1e-15), "{} mu_{j}", k.name());
            }
            assert_eq!(k.moment(3, false), 0.0);
        }
    }

    #[test]
    fn l2_and_overlap() {
        let u = KernelSpec::uniform();
        assert!(close(u.l2_norm_sq(), 0.5, 1e-15));
        assert!(close(u.overlap(0.5), 0.5, 1e-15));
        let t = KernelSpec::triangular();
        assert!(close(t.overlap(1.0), t.l2_norm_sq(), 1e-15));
        assert!(close(t.l2_norm_sq(), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn uniform_correlation_is_brownian() {
        let u = KernelSpec::uniform();
        for i in 1..=20 {
            let a = i as f64 / 20.0;
            assert!(close(u.gp_correlation(a), a.sqrt(), 1e-14));
        }
    }

    #[test]
    fn ev_constants_builtin() {
        let c = KernelSpec::uniform().ev_constants();
        assert_eq!(c.branch, EvBranch::BoundaryNonzero);
        assert!(close(c.constant, 1.0 / (2.0 * std::f64::consts::PI.sqrt()), 1e-14));
        let c = KernelSpec::triangular().ev_constants();
        assert_eq!(c.branch, EvBranch::BoundaryZero);
        assert!(close(c.constant, 3f64.sqrt() / (4.0 * std::f64::consts::PI), 1e-14));
        assert_eq!(KernelSpec::epanechnikov().ev_constants().branch, EvBranch::BoundaryZero);
    }

    #[test]
    fn equivalent_kernels_table_rows() {
        let ek = equivalent_kernel(&KernelSpec::uniform(), 1).unwrap().result;
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert!(close(ek.eval(x), 4.0 - 6.0 * x, 1e-12));
        }
        let ek = equivalent_kernel(&KernelSpec::triangular(), 2).unwrap().result;
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            let want = 12.0 * (1.0 - 5.0 * x + 5.0 * x * x) * (1.0 - x);
            assert!(close(ek.eval(x), want, 1e-11));
        }
        let e0 = equivalent_kernel(&KernelSpec::epanechnikov(), 0).unwrap();
        assert_eq!(e0.result, KernelSpec::epanechnikov());
    }

    #[test]
    fn singular_moments_detected() {
        // a kernel supported on a tiny interval has a nearly singular M at order 2
        let k = KernelSpec::new("spike", 1e-4, vec![(0.0, 1e-4, vec![1.0])]).unwrap();
        assert!(matches!(equivalent_kernel(&k, 2), Err(KernelError::SingularMoments { .. })));
    }

    #[test]
    fn config_round_trip() {
        let text = "# biweight\nname = biweight\nsupport = 1\n[0, 1]: 0.9375 0 -1.875 0 0.9375\n";
        let k = KernelSpec::parse_config(text).unwrap();
        assert_eq!(k.name(), "biweight");
        assert!(close(k.moment(0, false), 1.0, 1e-12));
        let err = KernelSpec::parse_config("support = 1\n[0, 1] 1 2\n").unwrap_err();
        assert!(matches!(err, KernelError::Config { line: 2, .. }));
    }

    #[test]
    fn rejects_bad_kernels() {
        assert!(KernelSpec::new("z", 1.0, vec![(0.0, 1.0, vec![0.0])]).is_err());
        assert!(KernelSpec::new("z", 1.0, vec![(0.0, 2.0, vec![1.0])]).is_err());
        assert!(KernelSpec::new("z", 1.0, vec![(0.0, 1.0, vec![1.0; 14])]).is_err());
        assert!(KernelSpec::builtin("gaussian").is_err());
    }
}
