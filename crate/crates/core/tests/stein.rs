use proptest::prelude::*;

use mldep::distance::{soft_clip_family, unit_law, SoftClip, TestFunction};
use mldep::linalg::halton;
use mldep::stein::{
    majorant_average, oscillation_majorant_with, stein_derivative, stein_eval, stein_eval_checked,
    stein_residual, third_derivative_bound, third_derivative_certificate, MajorantKind,
    MajorantSampler, QuadratureSpec, SteinSolution,
};
use mldep::{GaussianLaw, SpdMatrix};

fn sol(phi: &TestFunction, eps: f64) -> SteinSolution {
    SteinSolution::with_default_quadrature(phi, &unit_law(phi.dim()).unwrap(), eps).unwrap()
}

fn centered_clip() -> TestFunction {
    TestFunction::soft_clip(SoftClip::new(0.5, 1.0, 1.0, 0.0, vec![1.0]).unwrap())
}

fn points_1d(count: usize, r: f64) -> Vec<Vec<f64>> {
    (1..=count as u64)
        .map(|i| vec![r * (2.0 * halton(i, 2) - 1.0)])
        .collect()
}

#[test]
fn quadrature_spec_limits() {
    assert!(QuadratureSpec::new(15, 32).is_err());
    assert!(QuadratureSpec::new(32, 8).is_err());
    let q = QuadratureSpec::new(16, 16).unwrap();
    assert_eq!(q.refined().s_nodes, 32);
}

#[test]
fn constant_phi_vanishes() {
    let s = sol(&TestFunction::constant(1, 2.0), 0.3);
    for x in [-1.0, 0.0, 2.5] {
        assert!(stein_eval(&s, &[x]).unwrap().abs() < 1e-14);
        assert!(stein_residual(&s, &[x]).unwrap() < 1e-14);
    }
    let rep = third_derivative_certificate(&s, &points_1d(10, 3.0)).unwrap();
    assert!(rep.max_ratio < 1e-14);
    let sampler = MajorantSampler::new(1);
    for kind in [MajorantKind::H, MajorantKind::HPrime] {
        assert!(oscillation_majorant_with(&s, 0.2, kind, &[0.3], &sampler).unwrap() < 1e-14);
    }
}

#[test]
fn linear_phi_closed_form() {
    let phi = TestFunction::linear(vec![0.5]);
    for eps in [0.25, 0.5] {
        let s = sol(&phi, eps);
        for x in [-2.0, 0.3, 1.0, 3.0] {
            let want = 0.5 * x * (1.0f64 - eps * eps).sqrt();
            assert!((stein_eval(&s, &[x]).unwrap() - want).abs() < 1e-8);
            assert!(stein_derivative(&s, &[x], 2).unwrap().max_abs_entry() < 1e-8);
            assert!(stein_residual(&s, &[x]).unwrap() < 1e-6);
        }
    }
}

#[test]
fn derivative_parity_and_order_errors() {
    let even = TestFunction::new(1, "even", Some(0.5), |x| 0.5 * (1.0 + x[0] * x[0]).sqrt());
    let s = sol(&even, 0.3);
    assert!(stein_derivative(&s, &[0.0], 3).unwrap().max_abs_entry() < 1e-12);
    assert!(stein_derivative(&s, &[0.0], 4).is_err());
    assert!(stein_eval(&s, &[0.0, 1.0]).is_err());
    assert!(stein_eval(&s, &[f64::NAN]).is_err());
}

#[test]
fn derivatives_match_finite_differences() {
    let h = 1e-3;
    for phi in soft_clip_family(1) {
        let s = sol(&phi, 0.3);
        let x = 0.7;
        let f = |t: f64| stein_eval(&s, &[t]).unwrap();
        let fd2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        let d2 = stein_derivative(&s, &[x], 2).unwrap().get(&[0, 0]);
        assert!((d2 - fd2).abs() < 1e-4, "{d2} vs {fd2}");
        let g = |t: f64| stein_derivative(&s, &[t], 2).unwrap().get(&[0, 0]);
        let fd3 = (g(x + h) - g(x - h)) / (2.0 * h);
        let d3 = stein_derivative(&s, &[x], 3).unwrap().get(&[0, 0, 0]);
        assert!((d3 - fd3).abs() < 1e-3, "{d3} vs {fd3}");
    }
    // two dimensions, mixed entries
    let law = unit_law(2).unwrap();
    let phi = &soft_clip_family(2)[1];
    let s = SteinSolution::with_default_quadrature(phi, &law, 0.4).unwrap();
    let x = [0.4, -0.2];
    let f = |a: f64, b: f64| stein_eval(&s, &[x[0] + a, x[1] + b]).unwrap();
    let fd01 = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    let d01 = stein_derivative(&s, &x, 2).unwrap().get(&[0, 1]);
    assert!((d01 - fd01).abs() < 1e-4, "{d01} vs {fd01}");
}

#[test]
fn soft_clip_residuals_small() {
    for phi in soft_clip_family(1) {
        let s = sol(&phi, 0.25);
        for x in [-2.0, 0.0, 2.0] {
            assert!(stein_residual(&s, &[x]).unwrap() <= 1e-3);
        }
        stein_eval_checked(&s, &[1.0]).unwrap();
    }
}

#[test]
fn third_derivative_certificates() {
    let s = sol(&centered_clip(), 0.5);
    let rep = third_derivative_certificate(&s, &points_1d(100, 4.0)).unwrap();
    assert_eq!(rep.bound, 30.0);
    assert!(rep.max_ratio <= 1.0);
    let law4 = GaussianLaw::new(SpdMatrix::new(1, vec![4.0]).unwrap());
    assert_eq!(third_derivative_bound(&law4, 0.5), 7.5);
    let s4 = SteinSolution::with_default_quadrature(&centered_clip(), &law4, 0.5).unwrap();
    let rep = third_derivative_certificate(&s4, &points_1d(100, 8.0)).unwrap();
    assert_eq!(rep.bound, 7.5);
    assert!(rep.max_ratio <= 1.0);
}

#[test]
fn majorant_dominates_sampled_oscillation() {
    let s = SteinSolution::new(
        &centered_clip(),
        &unit_law(1).unwrap(),
        0.25,
        QuadratureSpec::fast_for(1),
    )
    .unwrap();
    let sampler = MajorantSampler::new(1);
    for i in 1..=50u64 {
        let x = 6.0 * halton(i, 2) - 3.0;
        let delta = 0.02 + 0.3 * halton(i, 3);
        let osc = sampler.oscillation(&s, 2, &[x], delta).unwrap();
        let h = oscillation_majorant_with(&s, delta, MajorantKind::H, &[x], &sampler).unwrap();
        assert!(osc <= h, "x = {x}, δ = {delta}: {osc} > {h}");
    }
}

#[test]
fn majorant_gaussian_average_bound() {
    let s = SteinSolution::new(
        &centered_clip(),
        &unit_law(1).unwrap(),
        0.25,
        QuadratureSpec::fast_for(1),
    )
    .unwrap();
    let avg = majorant_average(&s, 0.1, MajorantKind::H, 16).unwrap();
    assert!(avg.ratio <= 1.0 && avg.value > 0.0);
    assert!((avg.bound - 100.0 * 0.25f64.ln().abs() * 0.1).abs() < 1e-12);
    assert!(majorant_average(&s, 0.0, MajorantKind::H, 16).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stein_eval_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, x in -3.0f64..3.0) {
        let fam = soft_clip_family(1);
        let comb = TestFunction::combine(a, &fam[0], b, &fam[2]).unwrap();
        let lhs = stein_eval(&sol(&comb, 0.3), &[x]).unwrap();
        let rhs = a * stein_eval(&sol(&fam[0], 0.3), &[x]).unwrap()
            + b * stein_eval(&sol(&fam[2], 0.3), &[x]).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}
