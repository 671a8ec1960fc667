//! Quadrature rules: Gauss–Hermite (probabilists' weight), Gauss–Legendre
//! panels and adaptive Gauss–Kronrod.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::linalg::SpdMatrix;

/// One-dimensional rule: nodes and weights.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn hermite_cache() -> &'static Mutex<HashMap<usize, Arc<Rule>>> {
    static C: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

fn legendre_cache() -> &'static Mutex<HashMap<usize, Arc<Rule>>> {
    static C: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    C.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss–Hermite rule for E[f(Z)], Z ~ N(0,1); weights sum to one.
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    let mut c = hermite_cache().lock().unwrap();
    c.entry(n)
        .or_insert_with(|| Arc::new(build_hermite(n)))
        .clone()
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    let mut c = legendre_cache().lock().unwrap();
    c.entry(n)
        .or_insert_with(|| Arc::new(build_legendre(n)))
        .clone()
}

/// Orthonormal recurrence values p_0..p_{n-1} and p_n at x for the Jacobi
/// matrix with zero diagonal and off-diagonals beta(k), k = 1..n-1.
fn orthonormal_values(x: f64, n: usize, beta: &dyn Fn(usize) -> f64) -> (f64, f64, f64) {
    // returns (sum p_k^2 for k < n, p_{n-1}, p_n)
    let mut pm1 = 0.0;
    let mut p = 1.0;
    let mut sum = 0.0;
    for k in 0..n {
        sum += p * p;
        let bk1 = beta(k + 1);
        let bk = if k == 0 { 0.0 } else { beta(k) };
        let next = (x * p - bk * pm1) / bk1;
        pm1 = p;
        p = next;
    }
    (sum, pm1, p)
}

fn golub_welsch(n: usize, beta: &dyn Fn(usize) -> f64, mu0: f64) -> Rule {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        j[(k - 1, k)] = beta(k);
        j[(k, k - 1)] = beta(k);
    }
    let eig = SymmetricEigen::new(j);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Newton polish on p_n using p_n' = (n-th coefficient) relation via
    // finite recurrence differentiation.
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pn, dpn) = value_and_derivative(*x, n, beta);
            if dpn == 0.0 {
                break;
            }
            let dx = pn / dpn;
            *x -= dx;
            if dx.abs() < 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| mu0 / orthonormal_values(x, n, beta).0)
        .collect();
    // enforce exact symmetry of the rule
    for k in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - k] - nodes[k]);
        nodes[k] = -a;
        nodes[n - 1 - k] = a;
        let w = 0.5 * (weights[k] + weights[n - 1 - k]);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn value_and_derivative(x: f64, n: usize, beta: &dyn Fn(usize) -> f64) -> (f64, f64) {
    let mut pm1 = 0.0;
    let mut p = 1.0;
    let mut dpm1 = 0.0;
    let mut dp = 0.0;
    for k in 0..n {
        let bk1 = beta(k + 1);
        let bk = if k == 0 { 0.0 } else { beta(k) };
        let next = (x * p - bk * pm1) / bk1;
        let dnext = (p + x * dp - bk * dpm1) / bk1;
        pm1 = p;
        p = next;
        dpm1 = dp;
        dp = dnext;
    }
    (p, dp)
}

fn build_hermite(n: usize) -> Rule {
    golub_welsch(n, &|k| (k as f64).sqrt(), 1.0)
}

fn build_legendre(n: usize) -> Rule {
    golub_welsch(
        n,
        &|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        2.0,
    )
}

/// Tensor-product Gauss–Hermite rule for E[f(Z)], Z ~ N(0, Λ), using the
/// symmetric square root Λ^{1/2} to map standard nodes.
#[derive(Clone, Debug)]
pub struct GaussianRule {
    pub dim: usize,
    /// Flattened nodes (count × dim).
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianRule {
    pub fn new(cov: &SpdMatrix, per_axis: usize) -> Self {
        let n = cov.dim();
        let rule = gauss_hermite(per_axis);
        let s = cov.sqrt_matrix();
        let count = per_axis.pow(n as u32);
        let mut nodes = Vec::with_capacity(count * n);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; n];
        let mut g = vec![0.0; n];
        for _ in 0..count {
            let mut w = 1.0;
            for a in 0..n {
                g[a] = rule.nodes[idx[a]];
                w *= rule.weights[idx[a]];
            }
            for i in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += s[i * n + k] * g[k];
                }
                nodes.push(v);
            }
            weights.push(w);
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            dim: n,
            nodes,
            weights,
        }
    }

    /// Composite Gauss–Legendre rule for N(0, var) on ±10 standard
    /// deviations, with `panels` panels of order 8.
    pub fn legendre_1d(var: f64, panels: usize) -> Self {
        let sd = var.sqrt();
        let r = composite_legendre(-10.0, 10.0, panels.max(1), 8);
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        Self {
            dim: 1,
            nodes: r.nodes.iter().map(|z| sd * z).collect(),
            weights: r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(z, w)| w * c * (-0.5 * z * z).exp())
                .collect(),
        }
    }

    /// Standard rule N(0, Id).
    pub fn standard(dim: usize, per_axis: usize) -> Self {
        Self::new(&SpdMatrix::identity(dim).expect("identity"), per_axis)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .chunks(self.dim)
            .zip(&self.weights)
            .map(|(z, w)| w * f(z))
            .sum()
    }
}

/// Composite Gauss–Legendre on [a, b] with `panels` equal panels of order `order`.
pub fn composite_legendre(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    let r = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            nodes.push(lo + 0.5 * h * (x + 1.0));
            weights.push(0.5 * h * w);
        }
    }
    Rule { nodes, weights }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        rk += WGK[j] * s;
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    (rk * h, ((rk - rg) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of f over [a, b] to absolute
/// tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let f: &dyn Fn(f64) -> f64 = &f;
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut evals = 0usize;
    while let Some((lo, hi, t)) = stack.pop() {
        let (v, e) = gk15(f, lo, hi);
        evals += 15;
        if e <= t.max(1e-15 * v.abs()) || (hi - lo).abs() < 1e-12 * (b - a).abs() {
            total += v;
        } else {
            if evals > 2_000_000 {
                return Err(Error::Numerical(
                    "adaptive quadrature budget exhausted".into(),
                ));
            }
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t));
            stack.push((mid, hi, 0.5 * t));
        }
    }
    Ok(total)
}

/// Adaptive E[f(σZ)] for scalar Gaussian, truncated at ±12σ.
pub fn gaussian_expect_adaptive(f: impl Fn(f64) -> f64, sigma: f64, tol: f64) -> Result<f64> {
    let g = |z: f64| f(sigma * z) * crate::special::std_normal_pdf(z);
    let mut total = 0.0;
    // split to help localize kinks near the bulk
    let cuts = [-12.0, -4.0, -1.0, 0.0, 1.0, 4.0, 12.0];
    for w in cuts.windows(2) {
        total += integrate(g, w[0], w[1], tol / 6.0)?;
    }
    Ok(total)
}

/// Vector version of [`GaussianRule::expect`] with dimension check.
pub fn expect_checked(rule: &GaussianRule, dim: usize, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    check_dim(rule.dim, dim)?;
    Ok(rule.expect(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [16, 48, 64, 128] {
            let r = gauss_hermite(n);
            let m0: f64 = r.weights.iter().sum();
            let m2: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
            let m4: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(4))
                .sum();
            let m10: f64 = r
                .nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(10))
                .sum();
            assert!((m0 - 1.0).abs() < 1e-13, "n={n}");
            assert!((m2 - 1.0).abs() < 1e-12);
            assert!((m4 - 3.0).abs() < 1e-11);
            assert!((m10 - 945.0).abs() < 1e-8);
        }
    }

    #[test]
    fn legendre_exact() {
        let r = gauss_legendre(8);
        let s: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(x, w)| w * x.powi(14))
            .sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_kink() {
        let v = integrate(|x: f64| x.abs(), -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        let e = gaussian_expect_adaptive(|x| x.abs(), 1.0, 1e-12).unwrap();
        assert!((e - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-11);
    }

    #[test]
    fn gaussian_rule_covariance() {
        let c = SpdMatrix::new(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let r = GaussianRule::new(&c, 16);
        let e01 = r.expect(|z| z[0] * z[1]);
        let e00 = r.expect(|z| z[0] * z[0]);
        assert!((e01 - 0.5).abs() < 1e-12);
        assert!((e00 - 2.0).abs() < 1e-12);
    }
}
