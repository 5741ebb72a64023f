mod common;

use common::{closed_forms, simpson_pieces, Stream};
use snoopband::kernels::{equivalent_kernel, normalized_boundary_kernel, EvBranch, KernelError, KernelSpec};

fn builtins() -> [KernelSpec; 3] {
    [KernelSpec::uniform(), KernelSpec::triangular(), KernelSpec::epanechnikov()]
}

#[test]
fn moment_examples() {
    assert!((KernelSpec::uniform().moment(1, true) - 0.25).abs() < 1e-15);
    assert!((KernelSpec::triangular().moment(2, true) - 1.0 / 12.0).abs() < 1e-15);
    for k in builtins() {
        for j in [1, 3, 5, 7] {
            assert_eq!(k.moment(j, false), 0.0);
        }
    }
}

#[test]
fn equivalent_kernels_match_closed_forms() {
    let ind = |u: f64| f64::from(u8::from(u.abs() <= 1.0));
    let table = closed_forms();
    for (base, r, closed) in table {
        let eq = equivalent_kernel(&base, r).unwrap();
        assert_eq!(eq.order, r);
        for i in 0..1000 {
            let u = -1.2 + 2.4 * i as f64 / 999.0;
            let got = eq.result.eval(u);
            let want = closed(u) * if r == 0 { 1.0 } else { ind(u) };
            assert!((got - want).abs() < 1e-10, "{} r={r} u={u}: {got} vs {want}", base.name());
        }
    }
}

#[test]
fn order_zero_is_identity() {
    for k in builtins() {
        assert_eq!(equivalent_kernel(&k, 0).unwrap().result, k);
    }
}

#[test]
fn boundary_moment_conditions() {
    for k in builtins() {
        for r in 0..=2 {
            let nk = normalized_boundary_kernel(&k, r).unwrap();
            assert!((nk.moment(0, true) - 1.0).abs() < 1e-10);
            for j in 1..=r {
                assert!(nk.moment(j, true).abs() < 1e-10, "{} r={r} j={j}", k.name());
            }
        }
    }
}

#[test]
fn l2_and_overlap_examples() {
    let u = KernelSpec::uniform();
    assert!((u.l2_norm_sq() - 0.5).abs() < 1e-15);
    assert!((u.overlap(0.5) - 0.5).abs() < 1e-15);
    for k in builtins() {
        assert!((k.overlap(1.0) - k.l2_norm_sq()).abs() < 1e-14);
    }
}

#[test]
fn analytic_integrals_match_simpson() {
    let mut s = Stream::new(7);
    let kernels: Vec<KernelSpec> =
        builtins().iter().flat_map(|k| (0..=2).map(move |r| normalized_boundary_kernel(k, r).unwrap())).collect();
    for case in 0..50 {
        let k = &kernels[case % kernels.len()];
        let a = 0.05 + 0.95 * s.uniform();
        let j = (s.next_u64() % 7) as usize;
        let f_mom = |u: f64| u.powi(j as i32) * k.eval(u);
        let mom = simpson_pieces(&f_mom, 0.0, 1.0, &[], 1e-10);
        assert!((mom - k.moment(j, true)).abs() < 1e-8, "moment {j} of {}", k.name());
        let f_l2 = |u: f64| k.eval(u).powi(2);
        let l2 = 2.0 * simpson_pieces(&f_l2, 0.0, 1.0, &[], 1e-10);
        assert!((l2 - k.l2_norm_sq()).abs() < 1e-8);
        let f_ov = |u: f64| k.eval(a * u) * k.eval(u);
        let ov = 2.0 * simpson_pieces(&f_ov, 0.0, 1.0, &[], 1e-10);
        assert!((ov - k.overlap(a)).abs() < 1e-8, "overlap({a}) of {}", k.name());
    }
}

#[test]
fn uniform_correlation_is_brownian() {
    let u = KernelSpec::uniform();
    for i in 1..=100 {
        let a = i as f64 / 100.0;
        assert!((u.gp_correlation(a) - a.sqrt()).abs() < 1e-14);
    }
    for k in builtins() {
        assert_eq!(k.gp_correlation(1.0), 1.0);
    }
}

#[test]
fn triangular_correlation_matches_quadrature() {
    let k = KernelSpec::triangular();
    let f = |u: f64| common::tri(0.5 * u) * common::tri(u);
    let ov = 2.0 * simpson_pieces(&f, 0.0, 1.0, &[], 1e-10);
    let l2 = 2.0 * simpson_pieces(&|u: f64| common::tri(u).powi(2), 0.0, 1.0, &[], 1e-10);
    let oracle = 0.5f64.sqrt() * ov / l2;
    assert!((k.gp_correlation(0.5) - oracle).abs() < 1e-9);
}

#[test]
fn correlation_nonincreasing_as_ratio_shrinks() {
    for base in builtins() {
        for r in 0..=2 {
            let k = equivalent_kernel(&base, r).unwrap().result;
            let mut prev = 1.0;
            for i in (1..=100).rev() {
                let c = k.gp_correlation(i as f64 / 100.0);
                assert!(c <= prev + 1e-12, "{} r={r} a={}", base.name(), i as f64 / 100.0);
                assert!((0.0..=1.0 + 1e-12).contains(&c));
                prev = c;
            }
        }
    }
}

#[test]
fn ev_constant_examples() {
    let u = KernelSpec::uniform().ev_constants();
    assert_eq!(u.branch, EvBranch::BoundaryNonzero);
    assert!((u.constant - 1.0 / (2.0 * std::f64::consts::PI.sqrt())).abs() < 1e-14);
    let t = KernelSpec::triangular().ev_constants();
    assert_eq!(t.branch, EvBranch::BoundaryZero);
    assert!((t.constant - 3f64.sqrt() / (4.0 * std::f64::consts::PI)).abs() < 1e-14);
    assert_eq!(KernelSpec::epanechnikov().ev_constants().branch, EvBranch::BoundaryZero);
}

#[test]
fn singular_moment_matrix_is_reported() {
    // at order 12 the uniform moment matrix is a scaled Hilbert matrix
    let k = KernelSpec::uniform();
    assert!(matches!(normalized_boundary_kernel(&k, 12), Err(KernelError::SingularMoments { .. })));
}
