mod common;

use common::{invert, side_fit, Stream};
use snoopband::kernels::KernelSpec;
use snoopband::locpoly::{fit_one_side, rd_fuzzy, rd_sharp, LocPolyError, RDData, Side, Variance};
use snoopband::mc::{gen_sample, theta_h_true, DesignSpec};

fn random_data(seed: u64, n: usize, fuzzy: bool) -> RDData {
    let mut s = Stream::new(seed);
    let x: Vec<f64> = (0..n).map(|_| 2.0 * s.uniform() - 1.0).collect();
    let d: Vec<f64> =
        x.iter().map(|&xi| f64::from(u8::from(s.uniform() < if xi >= 0.0 { 0.8 } else { 0.2 }))).collect();
    let y: Vec<f64> =
        x.iter().zip(&d).map(|(&xi, &di)| 0.3 + xi - 0.7 * xi * xi + 1.5 * di + 0.4 * s.normal()).collect();
    RDData::new(x, y, fuzzy.then_some(d)).unwrap()
}

fn kernel_fn(name: &str) -> fn(f64) -> f64 {
    match name {
        "uniform" => common::unif,
        "triangular" => common::tri,
        _ => common::epa,
    }
}

#[test]
fn constant_outcome_gives_constant_fit() {
    let x: Vec<f64> = (0..12).map(|i| -0.55 + 0.1 * i as f64).collect();
    let d = RDData::new(x, vec![4.25; 12], None).unwrap();
    for r in 0..=2 {
        let f = fit_one_side(&d, Side::Upper, 1.0, r, &KernelSpec::triangular()).unwrap();
        assert!((f.beta[0] - 4.25).abs() < 1e-12);
        assert!(f.beta[1..].iter().all(|b| b.abs() < 1e-10));
    }
}

#[test]
fn exact_polynomial_is_reproduced() {
    let h = 0.8;
    let x: Vec<f64> = (0..15).map(|i| -0.7 + 0.1 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|xi| 2.0 + 3.0 * xi.abs()).collect();
    let d = RDData::new(x, y, None).unwrap();
    for side in [Side::Upper, Side::Lower] {
        let f = fit_one_side(&d, side, h, 1, &KernelSpec::epanechnikov()).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-12);
        assert!((f.beta[1] - 3.0 * h).abs() < 1e-10);
    }
}

#[test]
fn fit_matches_normal_equations() {
    for seed in 0..10 {
        let d = random_data(seed, 20, false);
        for k in [KernelSpec::uniform(), KernelSpec::triangular(), KernelSpec::epanechnikov()] {
            for r in 0..=2 {
                for (side, upper) in [(Side::Upper, true), (Side::Lower, false)] {
                    let h = 1.0;
                    let Ok(fit) = fit_one_side(&d, side, h, r, &k) else { continue };
                    let (beta, ..) = side_fit(d.x(), d.y(), upper, h, r, &kernel_fn(k.name()));
                    for (a, b) in fit.beta.iter().zip(&beta) {
                        assert!((a - b).abs() < 1e-9, "seed {seed} {} r={r}: {a} vs {b}", k.name());
                    }
                    let n_pos = d.x().iter().filter(|&&x| side.contains(x) && k.eval(x / h) > 0.0).count();
                    assert_eq!(fit.n_eff, n_pos);
                }
            }
        }
    }
}

#[test]
fn symmetric_data_has_no_jump() {
    let mut s = Stream::new(3);
    let half: Vec<f64> = (0..40).map(|_| 0.05 + 0.9 * s.uniform()).collect();
    let x: Vec<f64> = half.iter().copied().chain(half.iter().map(|v| -v)).collect();
    let y: Vec<f64> = x.iter().map(|v| (3.0 * v.abs()).sin() + v * v).collect();
    let d = RDData::new(x, y, None).unwrap();
    for r in 0..=2 {
        let e = rd_sharp(&d, 0.9, r, &KernelSpec::triangular(), Variance::Ehw).unwrap();
        assert!(e.theta_hat.abs() < 1e-12, "r={r}: {}", e.theta_hat);
    }
}

#[test]
fn linear_trend_jump_is_recovered() {
    let x: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| 0.5 + 2.0 * v + f64::from(u8::from(v >= 0.0))).collect();
    let d = RDData::new(x, y, None).unwrap();
    let e = rd_sharp(&d, 0.6, 1, &KernelSpec::triangular(), Variance::Ehw).unwrap();
    assert!((e.theta_hat - 1.0).abs() < 1e-12);
}

#[test]
fn large_design_one_sample_tracks_population_value() {
    let design = DesignSpec::new(1).unwrap();
    let k = KernelSpec::triangular();
    let data = gen_sample(&design, 50_000, 99);
    let est = rd_sharp(&data, 0.2, 1, &k, Variance::Ehw).unwrap();
    let truth = theta_h_true(&design, 0.2, &k, 1).unwrap();
    assert!((est.theta_hat - truth).abs() < 3.0 * est.se, "{} vs {truth} (se {})", est.theta_hat, est.se);
}

#[test]
fn fuzzy_with_sharp_treatment_equals_sharp() {
    let sharp = random_data(5, 200, false);
    let d: Vec<f64> = sharp.x().iter().map(|&x| f64::from(u8::from(x >= 0.0))).collect();
    let fuzzy = RDData::new(sharp.x().to_vec(), sharp.y().to_vec(), Some(d)).unwrap();
    for var in [Variance::Ehw, Variance::Nn, Variance::Plugin] {
        let a = rd_sharp(&sharp, 0.5, 1, &KernelSpec::triangular(), var).unwrap();
        let b = rd_fuzzy(&fuzzy, 0.5, 1, &KernelSpec::triangular(), var).unwrap();
        assert!((a.theta_hat - b.theta_hat).abs() < 1e-12);
        assert!((a.se - b.se).abs() < 1e-10, "{var:?}");
    }
}

#[test]
fn flat_treatment_is_a_weak_first_stage() {
    let base = random_data(6, 100, false);
    let d = RDData::new(base.x().to_vec(), base.y().to_vec(), Some(vec![0.5; 100])).unwrap();
    assert!(matches!(
        rd_fuzzy(&d, 0.5, 1, &KernelSpec::triangular(), Variance::Ehw),
        Err(LocPolyError::WeakFirstStage { .. })
    ));
}

/// Intercept weights `wᵢ e₁'Γ⁻¹pᵢ` assembled by hand.
fn intercept_weights(rows: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut gram = vec![vec![0.0; p]; p];
    for (r, &wi) in rows.iter().zip(w) {
        for a in 0..p {
            for b in 0..p {
                gram[a][b] += wi * r[a] * r[b];
            }
        }
    }
    let inv = invert(&gram);
    rows.iter().zip(w).map(|(r, &wi)| wi * (0..p).map(|j| inv[0][j] * r[j]).sum::<f64>()).collect()
}

#[test]
fn fuzzy_matches_delta_method_oracle() {
    let data = random_data(8, 60, true);
    let (h, r) = (0.7, 1);
    let k = common::tri;
    let d = data.d().unwrap();
    let mut jumps = [0.0; 2];
    let mut cov = [[0.0; 3]; 2];
    for (s, upper) in [true, false].into_iter().enumerate() {
        let (by, rows, w, ys) = side_fit(data.x(), data.y(), upper, h, r, &k);
        let (bd, _, _, ds) = side_fit(data.x(), d, upper, h, r, &k);
        let sign = if upper { 1.0 } else { -1.0 };
        jumps[0] += sign * by[0];
        jumps[1] += sign * bd[0];
        let a = intercept_weights(&rows, &w);
        for i in 0..rows.len() {
            let fy: f64 = (0..=r).map(|j| rows[i][j] * by[j]).sum();
            let fd: f64 = (0..=r).map(|j| rows[i][j] * bd[j]).sum();
            let (ey, ed) = (ys[i] - fy, ds[i] - fd);
            cov[s][0] += a[i] * a[i] * ey * ey;
            cov[s][1] += a[i] * a[i] * ey * ed;
            cov[s][2] += a[i] * a[i] * ed * ed;
        }
    }
    let theta = jumps[0] / jumps[1];
    // gradient (1, −θ, −1, θ)/Δ over (α_uY, α_uD, α_ℓY, α_ℓD)
    let g = [1.0 / jumps[1], -theta / jumps[1]];
    let var: f64 = cov.iter().map(|c| g[0] * g[0] * c[0] + 2.0 * g[0] * g[1] * c[1] + g[1] * g[1] * c[2]).sum();
    let est = rd_fuzzy(&data, h, r, &KernelSpec::triangular(), Variance::Ehw).unwrap();
    assert!((est.theta_hat - theta).abs() < 1e-9);
    assert!((est.se - var.sqrt()).abs() < 1e-9);
}

#[test]
fn exact_variance_is_rejected_for_fuzzy() {
    let data = random_data(9, 80, true);
    let oracle = |_: f64| 1.0;
    assert!(matches!(
        rd_fuzzy(&data, 0.7, 1, &KernelSpec::triangular(), Variance::Exact(&oracle)),
        Err(LocPolyError::MissingOracle)
    ));
}

#[test]
fn plugin_matches_hand_computation() {
    let mut s = Stream::new(12);
    let n = 400;
    let sigma = 0.7;
    let x: Vec<f64> = (0..n).map(|_| 2.0 * s.uniform() - 1.0).collect();
    let y: Vec<f64> = (0..n).map(|_| sigma * s.normal()).collect();
    let data = RDData::new(x.clone(), y.clone(), None).unwrap();
    let h = 0.3;
    let est = rd_sharp(&data, h, 0, &KernelSpec::uniform(), Variance::Plugin).unwrap();

    let in_window = x.iter().filter(|v| v.abs() <= h).count() as f64;
    let f_hat = in_window / (2.0 * n as f64 * h);
    let side_var = |upper: bool| {
        let pts: Vec<f64> =
            x.iter().zip(&y).filter(|(xi, _)| (**xi >= 0.0) == upper && xi.abs() <= h).map(|(_, yi)| *yi).collect();
        let m = pts.iter().sum::<f64>() / pts.len() as f64;
        pts.iter().map(|v| (v - m).powi(2)).sum::<f64>() / pts.len() as f64
    };
    // the boundary kernel of the uniform local constant fit is 1 on [0, 1]
    let hand = (side_var(true) + side_var(false)) / f_hat;
    assert!((est.sigma_hat_sq - hand).abs() < 1e-10 * hand, "{} vs {hand}", est.sigma_hat_sq);
    // and it estimates 2σ²/f(0) with f(0) = 1/2
    assert!((est.sigma_hat_sq / (4.0 * sigma * sigma) - 1.0).abs() < 0.35);
}

#[test]
fn nn_variance_vanishes_for_constant_outcome() {
    let x = vec![-0.4, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4];
    let data = RDData::new(x, vec![2.0; 8], None).unwrap();
    let est = rd_sharp(&data, 1.0, 0, &KernelSpec::uniform(), Variance::Nn).unwrap();
    assert_eq!(est.sigma_hat_sq, 0.0);
    let few = RDData::new(vec![-0.2, -0.1, 0.1, 0.2, 0.3, 0.4], vec![1.0; 6], None).unwrap();
    assert!(matches!(
        rd_sharp(&few, 1.0, 0, &KernelSpec::uniform(), Variance::Nn),
        Err(LocPolyError::InsufficientNeighbors { .. })
    ));
}

#[test]
fn ehw_matches_sandwich_oracle() {
    for seed in 20..25 {
        let data = random_data(seed, 30, false);
        for r in 0..=2 {
            let (h, k) = (0.9, common::epa);
            let mut var = 0.0;
            for upper in [true, false] {
                let (b, rows, w, ys) = side_fit(data.x(), data.y(), upper, h, r, &k);
                let a = intercept_weights(&rows, &w);
                for i in 0..rows.len() {
                    let e: f64 = ys[i] - (0..=r).map(|j| rows[i][j] * b[j]).sum::<f64>();
                    var += a[i] * a[i] * e * e;
                }
            }
            let est = rd_sharp(&data, h, r, &KernelSpec::epanechnikov(), Variance::Ehw).unwrap();
            assert!((est.se * est.se - var).abs() < 1e-9, "seed {seed} r={r}");
            let nh = data.len() as f64 * h;
            assert!((est.sigma_hat_sq - nh * var).abs() < 1e-9 * nh);
        }
    }
}

#[test]
fn too_few_points_is_insufficient_data() {
    let data = RDData::new(vec![-0.5, -0.1, 0.1, 0.5], vec![0.0, 1.0, 2.0, 3.0], None).unwrap();
    assert!(matches!(
        fit_one_side(&data, Side::Upper, 1.0, 1, &KernelSpec::triangular()),
        Err(LocPolyError::InsufficientData { n_eff: 2, needed: 3, .. })
    ));
}
