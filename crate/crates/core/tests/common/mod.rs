//! Independent oracles shared by the integration tests. None of these call
//! into the library's numerical routines.
#![allow(dead_code)]

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Simpson over `[a, b]` split at `breaks`, so kinks in the integrand fall on
/// panel edges.
pub fn simpson_pieces(f: &dyn Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.windows(2).map(|w| simpson(f, w[0], w[1], tol / pts.len() as f64)).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> =
        (0..n).map(|j| gauss_solve(a.to_vec(), (0..n).map(|i| f64::from(u8::from(i == j))).collect())).collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Weighted least squares by explicitly assembled normal equations.
pub fn wls(rows: &[Vec<f64>], w: &[f64], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for ((r, &wi), &yi) in rows.iter().zip(w).zip(y) {
        for a in 0..p {
            xty[a] += wi * r[a] * yi;
            for b in 0..p {
                xtx[a][b] += wi * r[a] * r[b];
            }
        }
    }
    gauss_solve(xtx, xty)
}

/// One-sided local polynomial fit at zero: returns `(beta, rows, weights, y)`
/// over the observations with positive kernel weight on the chosen side.
pub fn side_fit(
    x: &[f64],
    y: &[f64],
    upper: bool,
    h: f64,
    r: usize,
    kern: &dyn Fn(f64) -> f64,
) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut w = Vec::new();
    let mut ys = Vec::new();
    for (&xi, &yi) in x.iter().zip(y) {
        if (xi >= 0.0) == upper {
            let wi = kern(xi / h);
            if wi > 0.0 {
                rows.push((0..=r).map(|j| (xi.abs() / h).powi(j as i32)).collect());
                w.push(wi);
                ys.push(yi);
            }
        }
    }
    (wls(&rows, &w, &ys), rows, w, ys)
}

/// Deterministic pseudo-random stream for test data (SplitMix64).
pub struct Stream(u64);

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box–Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

pub fn tri(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

pub fn unif(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.5
    } else {
        0.0
    }
}

pub fn epa(u: f64) -> f64 {
    0.75 * (1.0 - u * u).max(0.0)
}

/// Closed forms of the equivalent kernels. Orders 1 and 2 are
/// stated on the support `|u| ≤ 1`.
pub fn closed_forms() -> [(snoopband::kernels::KernelSpec, usize, fn(f64) -> f64); 9] {
    use snoopband::kernels::KernelSpec;
    [
        (KernelSpec::uniform(), 0, |u| if u.abs() <= 1.0 { 0.5 } else { 0.0 }),
        (KernelSpec::uniform(), 1, |u| if u.abs() <= 1.0 { 4.0 - 6.0 * u.abs() } else { 0.0 }),
        (KernelSpec::uniform(), 2, |u| if u.abs() <= 1.0 { 9.0 - 36.0 * u.abs() + 30.0 * u * u } else { 0.0 }),
        (KernelSpec::triangular(), 0, |u| (1.0 - u.abs()).max(0.0)),
        (KernelSpec::triangular(), 1, |u| 6.0 * (1.0 - 2.0 * u.abs()) * (1.0 - u.abs()).max(0.0)),
        (KernelSpec::triangular(), 2, |u| 12.0 * (1.0 - 5.0 * u.abs() + 5.0 * u * u) * (1.0 - u.abs()).max(0.0)),
        (KernelSpec::epanechnikov(), 0, |u| 0.75 * (1.0 - u * u).max(0.0)),
        (KernelSpec::epanechnikov(), 1, |u| 6.0 / 19.0 * (16.0 - 30.0 * u.abs()) * (1.0 - u * u).max(0.0)),
        (KernelSpec::epanechnikov(), 2, |u| (85.0 - 400.0 * u.abs() + 385.0 * u * u) * (1.0 - u * u).max(0.0) / 8.0),
    ]
}
