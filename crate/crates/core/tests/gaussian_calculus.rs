use approx::assert_relative_eq;
use proptest::prelude::*;

use mldep::gaussian::{
    gaussian_bound_certificates, gaussian_convolve, gaussian_derivative_tensor, gaussian_pdf,
};
use mldep::linalg::halton;
use mldep::{GaussianLaw, SpdMatrix};

fn law(dim: usize, entries: &[f64]) -> GaussianLaw {
    GaussianLaw::new(SpdMatrix::new(dim, entries.to_vec()).unwrap())
}

#[test]
fn pdf_examples() {
    let std1 = GaussianLaw::standard(1).unwrap();
    assert_relative_eq!(
        gaussian_pdf(&std1, &[0.0]).unwrap(),
        0.398_942_280_401_432_7,
        max_relative = 1e-15
    );
    let four = law(1, &[4.0]);
    assert_relative_eq!(
        gaussian_pdf(&four, &[0.0]).unwrap(),
        1.0 / (8.0 * std::f64::consts::PI).sqrt(),
        max_relative = 1e-15
    );
    // 30-digit reference value.
    let l = law(2, &[2.0, 1.0, 1.0, 2.0]);
    assert_relative_eq!(
        gaussian_pdf(&l, &[1.0, 1.0]).unwrap(),
        0.065_840_735_998_962_71,
        max_relative = 1e-12
    );
    assert!(gaussian_pdf(&l, &[1.0]).is_err());
}

#[test]
fn convolve_examples() {
    let id = SpdMatrix::identity(2).unwrap();
    let sum = gaussian_convolve(&id, &id).unwrap();
    assert_eq!(sum.entries(), &[2.0, 0.0, 0.0, 2.0]);
    assert!(SpdMatrix::new(1, vec![0.0]).is_err());
    assert!(gaussian_convolve(&id, &SpdMatrix::identity(1).unwrap()).is_err());
}

fn trapezoid_convolution_1d(a: &GaussianLaw, b: &GaussianLaw, x: f64) -> f64 {
    let h = 1e-3;
    let n = 24_000;
    let mut s = 0.0;
    for k in 0..=n {
        let y = -12.0 + h * k as f64;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        s += w * a.density(&[y]) * b.density(&[x - y]);
    }
    s * h
}

#[test]
fn grid_convolution_matches_sum_1d() {
    let a = law(1, &[1.0]);
    let b = law(1, &[2.0]);
    let c = GaussianLaw::new(gaussian_convolve(a.covariance(), b.covariance()).unwrap());
    for i in 0..=16 {
        let x = -4.0 + 0.5 * i as f64;
        let v = trapezoid_convolution_1d(&a, &b, x);
        assert!((v - c.density(&[x])).abs() < 1e-6, "x = {x}");
    }
}

#[test]
fn grid_convolution_matches_sum_2d() {
    let a = law(2, &[1.0, 0.3, 0.3, 0.8]);
    let b = law(2, &[0.5, -0.1, -0.1, 1.2]);
    let c = GaussianLaw::new(gaussian_convolve(a.covariance(), b.covariance()).unwrap());
    let h = 0.05;
    let n = 320;
    for x in [[0.0, 0.0], [1.0, -0.5], [-1.5, 2.0]] {
        let mut s = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let y = [-8.0 + h * i as f64, -8.0 + h * j as f64];
                s += a.density(&y) * b.density(&[x[0] - y[0], x[1] - y[1]]);
            }
        }
        assert!((s * h * h - c.density(&x)).abs() < 1e-5);
    }
}

#[test]
fn derivative_tensor_examples() {
    let std1 = GaussianLaw::standard(1).unwrap();
    let h = gaussian_derivative_tensor(&std1, &[0.0], 2).unwrap();
    assert_relative_eq!(
        h.get(&[0, 0]),
        -0.398_942_280_401_432_7,
        max_relative = 1e-15
    );
    let t = gaussian_derivative_tensor(&std1, &[0.0], 3).unwrap();
    assert_eq!(t.get(&[0, 0, 0]), 0.0);
    assert!(gaussian_derivative_tensor(&std1, &[0.0], 4).is_err());
}

fn fd_hessian(l: &GaussianLaw, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let f = |si: f64, sj: f64| {
                let mut y = x.to_vec();
                y[i] += si * h;
                y[j] += sj * h;
                l.density(&y)
            };
            out[i * n + j] =
                (f(1.0, 1.0) - f(1.0, -1.0) - f(-1.0, 1.0) + f(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    out
}

fn fd_third(l: &GaussianLaw, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n * n];
    for k in 0..n {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[k] += h;
        m[k] -= h;
        let hp = gaussian_derivative_tensor(l, &p, 2).unwrap();
        let hm = gaussian_derivative_tensor(l, &m, 2).unwrap();
        for ij in 0..n * n {
            out[ij * n + k] = (hp.data()[ij] - hm.data()[ij]) / (2.0 * h);
        }
    }
    out
}

#[test]
fn derivative_tensors_match_finite_differences() {
    let cases: Vec<(GaussianLaw, Vec<f64>)> = vec![
        (law(1, &[1.0]), vec![0.7]),
        (law(2, &[1.0, 0.0, 0.0, 2.0]), vec![1.0, 1.0]),
        (law(2, &[2.0, 1.0, 1.0, 2.0]), vec![-0.3, 0.8]),
        (
            law(3, &[1.5, 0.2, 0.1, 0.2, 1.0, -0.3, 0.1, -0.3, 0.9]),
            vec![0.4, -0.2, 0.6],
        ),
    ];
    for (l, x) in &cases {
        let h2 = gaussian_derivative_tensor(l, x, 2).unwrap();
        for (a, b) in h2.data().iter().zip(fd_hessian(l, x, 1e-4)) {
            assert!((a - b).abs() < 1e-6, "order 2: {a} vs {b}");
        }
        let h3 = gaussian_derivative_tensor(l, x, 3).unwrap();
        for (a, b) in h3.data().iter().zip(fd_third(l, x, 1e-4)) {
            assert!((a - b).abs() < 1e-4, "order 3: {a} vs {b}");
        }
    }
}

fn random_points(n: usize, count: usize, r: f64) -> Vec<Vec<f64>> {
    const P: [u64; 3] = [2, 3, 5];
    (1..=count as u64)
        .map(|i| (0..n).map(|a| r * (2.0 * halton(i, P[a]) - 1.0)).collect())
        .collect()
}

#[test]
fn bound_certificates_hold() {
    let id1 = GaussianLaw::standard(1).unwrap();
    let rep = gaussian_bound_certificates(&id1, 1.0, &[vec![0.0]]).unwrap();
    assert!(rep.rows[0].second < 1.0);
    let rep = gaussian_bound_certificates(&id1, 0.5, &random_points(1, 100, 5.0)).unwrap();
    assert!(rep.max_ratio <= 1.0);
    assert!(gaussian_bound_certificates(&id1, 0.5, &[])
        .unwrap()
        .rows
        .is_empty());
    assert!(gaussian_bound_certificates(&id1, 0.0, &[]).is_err());
    for (l, n) in [
        (law(1, &[3.0]), 1),
        (law(2, &[1.0, 0.4, 0.4, 0.5]), 2),
        (law(3, &[1.0, 0.0, 0.2, 0.0, 2.0, 0.0, 0.2, 0.0, 0.7]), 3),
    ] {
        for tau in [0.25, 1.0] {
            let rep = gaussian_bound_certificates(&l, tau, &random_points(n, 1000, 4.0)).unwrap();
            assert!(
                rep.max_ratio <= 1.0,
                "N = {n}, tau = {tau}: {}",
                rep.max_ratio
            );
        }
    }
}

proptest! {
    #[test]
    fn multiplication_identity(
        x in prop::collection::vec(-3.0f64..3.0, 2),
        z in prop::collection::vec(-3.0f64..3.0, 2),
        s in 0.0f64..=1.0,
        c in -0.8f64..0.8,
    ) {
        let l = law(2, &[1.0, c, c, 1.5]);
        let (a, b) = (s.sqrt(), (1.0 - s).sqrt());
        let u: Vec<f64> = (0..2).map(|i| b * z[i] + a * x[i]).collect();
        let v: Vec<f64> = (0..2).map(|i| b * x[i] - a * z[i]).collect();
        let lhs = l.density(&z) * l.density(&x);
        let rhs = l.density(&u) * l.density(&v);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
    }

    #[test]
    fn hessian_is_symmetric(x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let l = law(3, &[1.5, 0.2, 0.1, 0.2, 1.0, -0.3, 0.1, -0.3, 0.9]);
        let h = gaussian_derivative_tensor(&l, &x, 2).unwrap();
        let t = gaussian_derivative_tensor(&l, &x, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert_eq!(h.get(&[i, j]), h.get(&[j, i]));
                for k in 0..3 {
                    prop_assert!((t.get(&[i, j, k]) - t.get(&[k, i, j])).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn convolution_commutes(a in 0.1f64..5.0, b in 0.1f64..5.0) {
        let (x, y) = (SpdMatrix::diagonal(&[a]).unwrap(), SpdMatrix::diagonal(&[b]).unwrap());
        let (p, q) = (gaussian_convolve(&x, &y).unwrap(), gaussian_convolve(&y, &x).unwrap());
        prop_assert_eq!(p.entries(), q.entries());
    }
}
