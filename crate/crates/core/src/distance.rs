//! Test-function classes, mollification and distance estimators between
//! sample laws and centered Gaussians.

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::gaussian::{BallSampler, GaussianLaw};
use crate::linalg::SpdMatrix;
use crate::quadrature::{gaussian_expect_adaptive, integrate, GaussianRule};
use crate::special::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use crate::stats;

/// Gauss–Hermite nodes per axis for Gaussian expectations.
pub const HERMITE_NODES: usize = 64;

/// Safety factor on the oscillation condition.
pub const MEMBERSHIP_SAFETY: f64 = 1.05;

const ADAPTIVE_TOL: f64 = 1e-11;
const CONVERGENCE_TOL: f64 = 1e-6;

pub type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Profile g of a ridge function x ↦ g(u·x).
pub type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Ridge structure x ↦ g(u·x) of a test function.
#[derive(Clone)]
pub struct Ridge {
    pub direction: Vec<f64>,
    pub profile: Profile,
}

/// A real function on R^N with an optional gradient budget L̄.
#[derive(Clone)]
pub struct TestFunction {
    dim: usize,
    eval: Evaluator,
    lipschitz: Option<f64>,
    label: String,
    ridge: Option<Ridge>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("label", &self.label)
            .finish()
    }
}

impl TestFunction {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        lipschitz: Option<f64>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(f),
            lipschitz,
            label: label.into(),
            ridge: None,
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, format!("const({c})"), Some(0.0), move |_| c)
    }

    /// x ↦ a·x.
    pub fn linear(coeffs: Vec<f64>) -> Self {
        let lip = coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let label = format!("linear({coeffs:?})");
        let u = coeffs.clone();
        Self::new(coeffs.len(), label, Some(lip), move |x| {
            coeffs.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .with_ridge(u, Arc::new(|t| t))
    }

    /// Declares that this function equals x ↦ profile(direction·x).
    pub fn with_ridge(mut self, direction: Vec<f64>, profile: Profile) -> Self {
        debug_assert_eq!(direction.len(), self.dim);
        self.ridge = Some(Ridge { direction, profile });
        self
    }

    pub fn ridge(&self) -> Option<&Ridge> {
        self.ridge.as_ref()
    }

    /// a·f + b·g.
    pub fn combine(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Result<Self> {
        check_dim(f.dim, g.dim)?;
        let lip = match (f.lipschitz, g.lipschitz) {
            (Some(x), Some(y)) => Some(a.abs() * x + b.abs() * y),
            _ => None,
        };
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        Ok(Self::new(
            f.dim,
            format!("{a}*{}+{b}*{}", f.label, g.label),
            lip,
            move |x| a * fe(x) + b * ge(x),
        ))
    }

    pub fn soft_clip(clip: SoftClip) -> Self {
        let dim = clip.direction.len();
        let u = clip.direction.clone();
        let c = clip.clone();
        let profile: Profile = Arc::new(move |t| c.slope * c.ramp(t - c.shift));
        Self::new(dim, clip.label(), Some(clip.slope), move |x| clip.eval(x)).with_ridge(u, profile)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn evaluator(&self) -> Evaluator {
        self.eval.clone()
    }
}

/// Order of the smoothstep used by [`SoftClip`].
pub const SMOOTHSTEP_ORDER: usize = 6;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// ∫₀ᵘ S(v) dv for the order-k smoothstep
/// S(u) = Σ_j (−1)^j C(k+j, j) C(2k+1, k−j) u^{k+j+1}.
fn smoothstep_integral(u: f64) -> f64 {
    static COEFFS: OnceLock<Vec<f64>> = OnceLock::new();
    let k = SMOOTHSTEP_ORDER;
    let c = COEFFS.get_or_init(|| {
        (0..=k)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * binomial(k + j, j) * binomial(2 * k + 1, k - j) / (k + j + 2) as f64
            })
            .collect()
    });
    let mut acc = 0.0;
    for &cj in c.iter().rev() {
        acc = acc * u + cj;
    }
    acc * u.powi(k as i32 + 2)
}

/// Ridge ramp x ↦ slope·ρ(u·x − shift), where ρ has unit slope on
/// [−clip, clip], flattens with a C⁶ smoothstep over a band of width
/// `width`, and is constant beyond.
#[derive(Clone, Debug, Serialize)]
pub struct SoftClip {
    pub slope: f64,
    pub clip: f64,
    pub width: f64,
    pub shift: f64,
    pub direction: Vec<f64>,
}

impl SoftClip {
    pub fn new(slope: f64, clip: f64, width: f64, shift: f64, direction: Vec<f64>) -> Result<Self> {
        let nrm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm > 0.0) || !(width > 0.0) || clip < 0.0 {
            return invalid("soft clip needs a nonzero direction, width > 0, clip ≥ 0");
        }
        Ok(Self {
            slope,
            clip,
            width,
            shift,
            direction: direction.iter().map(|v| v / nrm).collect(),
        })
    }

    pub fn ramp(&self, t: f64) -> f64 {
        let a = t.abs();
        let v = if a <= self.clip {
            a
        } else if a >= self.clip + self.width {
            self.clip + 0.5 * self.width
        } else {
            let u = (a - self.clip) / self.width;
            self.clip + self.width * (u - smoothstep_integral(u))
        };
        v.copysign(t)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let t: f64 = self
            .direction
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            - self.shift;
        self.slope * self.ramp(t)
    }

    pub fn label(&self) -> String {
        format!(
            "softclip(s={},c={},w={},b={},u={:?})",
            self.slope, self.clip, self.width, self.shift, self.direction
        )
    }
}

/// The canonical candidate family: slope-½ soft clips.
pub fn soft_clip_family(dim: usize) -> Vec<TestFunction> {
    let e = |k: usize| {
        let mut v = vec![0.0; dim];
        v[k % dim] = 1.0;
        v
    };
    let diag = vec![1.0; dim];
    let specs = if dim == 1 {
        vec![
            SoftClip::new(0.5, 0.5, 1.0, 0.0, e(0)),
            SoftClip::new(0.5, 1.0, 1.0, 0.5, e(0)),
            SoftClip::new(0.5, 2.0, 1.0, -0.5, e(0)),
        ]
    } else {
        vec![
            SoftClip::new(0.5, 1.0, 1.0, 0.0, e(0)),
            SoftClip::new(0.5, 0.5, 1.0, 0.5, diag),
            SoftClip::new(0.5, 2.0, 1.0, -0.5, e(1)),
        ]
    };
    specs
        .into_iter()
        .map(|s| TestFunction::soft_clip(s.expect("valid soft clip")))
        .collect()
}

/// Gaussian expectation engine: adaptive Gauss–Kronrod in one dimension,
/// tensor Gauss–Hermite otherwise.
#[derive(Clone, Debug)]
pub enum GaussianExpectation {
    Adaptive { sigma: f64 },
    Hermite(Arc<GaussianRule>),
}

impl GaussianExpectation {
    pub fn new(law: &GaussianLaw) -> Self {
        Self::with_nodes(law, HERMITE_NODES)
    }

    pub fn with_nodes(law: &GaussianLaw, per_axis: usize) -> Self {
        if law.dim() == 1 {
            Self::Adaptive {
                sigma: law.covariance().get(0, 0).sqrt(),
            }
        } else {
            Self::Hermite(Arc::new(GaussianRule::new(law.covariance(), per_axis)))
        }
    }

    /// E[f(Z)], Z ~ N_Λ.
    pub fn expect(&self, f: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
        match self {
            Self::Adaptive { sigma } => gaussian_expect_adaptive(|z| f(&[z]), *sigma, ADAPTIVE_TOL),
            Self::Hermite(rule) => Ok(rule.expect(f)),
        }
    }
}

/// φ_ε(x) = ∫ φ(√(1−ε²)x − εz) N_Λ(z) dz.
#[derive(Clone, Debug)]
pub struct Mollifier {
    phi: TestFunction,
    eps: f64,
    law: GaussianLaw,
    engine: GaussianExpectation,
}

impl Mollifier {
    pub fn new(phi: &TestFunction, eps: f64, law: &GaussianLaw) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return invalid(format!("eps = {eps} outside (0, 1)"));
        }
        check_dim(law.dim(), phi.dim())?;
        Ok(Self {
            phi: phi.clone(),
            eps,
            law: law.clone(),
            engine: GaussianExpectation::new(law),
        })
    }

    fn eval_with(&self, engine: &GaussianExpectation, x: &[f64]) -> Result<f64> {
        let c = (1.0 - self.eps * self.eps).sqrt();
        let n = x.len();
        let eps = self.eps;
        let phi = &self.phi;
        engine.expect(&|z: &[f64]| {
            let mut y = [0.0f64; crate::linalg::MAX_DIM];
            for a in 0..n {
                y[a] = c * x[a] - eps * z[a];
            }
            phi.eval(&y[..n])
        })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.law.dim(), x.len())?;
        self.eval_with(&self.engine, x)
    }

    /// Evaluation with a node-doubling comparison (Hermite engine only).
    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        let v = self.eval(x)?;
        if let GaussianExpectation::Hermite(_) = self.engine {
            let fine = GaussianExpectation::with_nodes(&self.law, 2 * HERMITE_NODES);
            let w = self.eval_with(&fine, x)?;
            if (v - w).abs() > CONVERGENCE_TOL {
                return Err(Error::Numerical(format!(
                    "mollification not converged at {x:?}: {v} vs {w}"
                )));
            }
        }
        Ok(v)
    }
}

/// Returns φ_ε as a test function after a convergence probe at the origin
/// and the unit coordinate vectors.
pub fn mollify(phi: &TestFunction, eps: f64, law: &GaussianLaw) -> Result<TestFunction> {
    let m = Mollifier::new(phi, eps, law)?;
    let n = law.dim();
    let mut probe = vec![0.0; n];
    m.eval_checked(&probe)?;
    for a in 0..n {
        probe.iter_mut().for_each(|v| *v = 0.0);
        probe[a] = 1.0;
        m.eval_checked(&probe)?;
    }
    let lip = phi.lipschitz().map(|l| l * (1.0 - eps * eps).sqrt());
    let label = format!("mollify({},{eps})", phi.label());
    Ok(TestFunction::new(n, label, lip, move |x| {
        m.eval(x).unwrap_or(f64::NAN)
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct MembershipRow {
    pub r: f64,
    pub x0: Vec<f64>,
    pub integral: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MembershipReport {
    pub rows: Vec<MembershipRow>,
    pub worst_ratio: f64,
    pub max_gradient: f64,
    pub gradient_ok: bool,
    pub pass: bool,
}

fn quad_nodes_for(dim: usize) -> usize {
    match dim {
        1 => 64,
        2 => 24,
        _ => 10,
    }
}

/// Numerical check of the gradient budget and the Gaussian-averaged
/// oscillation condition ∫ osc_r φ(x) N_Λ(x − x₀) dx ≤ r.
pub fn class_membership_check(
    phi: &TestFunction,
    law: &GaussianLaw,
    lbar: f64,
    r_grid: &[f64],
    x0_grid: &[Vec<f64>],
) -> Result<MembershipReport> {
    let n = law.dim();
    check_dim(n, phi.dim())?;
    if r_grid.is_empty() || x0_grid.is_empty() {
        return invalid("membership grids must be nonempty");
    }
    if r_grid.iter().any(|r| !(*r > 0.0)) {
        return invalid("radii must be positive");
    }
    let rule = GaussianRule::new(law.covariance(), quad_nodes_for(n));
    let ball = BallSampler::new(n);
    let f = |x: &[f64]| phi.eval(x);
    let pairs: Vec<(f64, &Vec<f64>)> = r_grid
        .iter()
        .flat_map(|&r| x0_grid.iter().map(move |x0| (r, x0)))
        .collect();
    for (_, x0) in &pairs {
        check_dim(n, x0.len())?;
    }
    let rows: Vec<MembershipRow> = pairs
        .par_iter()
        .map(|&(r, x0)| {
            let integral = rule.expect(|z| {
                let x: Vec<f64> = z.iter().zip(x0).map(|(a, b)| a + b).collect();
                ball.oscillation(&f, &x, r)
            });
            MembershipRow {
                r,
                x0: x0.clone(),
                integral,
                ratio: integral / r,
            }
        })
        .collect();
    let worst_ratio = rows.iter().fold(0.0f64, |a, r| a.max(r.ratio));

    let mut max_gradient: f64 = 0.0;
    let mut probes: Vec<Vec<f64>> = x0_grid.to_vec();
    for z in rule.nodes.chunks(n) {
        probes.push(z.to_vec());
    }
    for p in &probes {
        let mut g2 = 0.0;
        for a in 0..n {
            let h = 1e-6 * p[a].abs().max(1.0);
            let mut xp = p.clone();
            let mut xm = p.clone();
            xp[a] += h;
            xm[a] -= h;
            let d = (phi.eval(&xp) - phi.eval(&xm)) / (2.0 * h);
            g2 += d * d;
        }
        max_gradient = max_gradient.max(g2.sqrt());
    }
    let gradient_ok = max_gradient <= lbar * (1.0 + 1e-6);
    let pass = gradient_ok && worst_ratio <= MEMBERSHIP_SAFETY;
    Ok(MembershipReport {
        rows,
        worst_ratio,
        max_gradient,
        gradient_ok,
        pass,
    })
}

/// Finite-support law.
#[derive(Clone, Debug, Serialize)]
pub struct DiscreteLaw {
    dim: usize,
    atoms: Vec<(Vec<f64>, f64)>,
}

impl DiscreteLaw {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return invalid("law needs at least one atom");
        }
        let dim = atoms[0].0.len();
        let mut total = 0.0;
        for (v, p) in &atoms {
            check_dim(dim, v.len())?;
            if !(*p >= 0.0) || !p.is_finite() {
                return invalid("atom probabilities must be nonnegative");
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("probabilities sum to {total}"));
        }
        Ok(Self { dim, atoms })
    }

    /// Scalar law from (value, probability) pairs.
    pub fn scalar(atoms: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(atoms.into_iter().map(|(v, p)| (vec![v], p)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }

    /// Scalar atoms sorted by value, equal values merged.
    pub fn sorted_scalar(&self) -> Result<Vec<(f64, f64)>> {
        check_dim(1, self.dim)?;
        let mut v: Vec<(f64, f64)> = self.atoms.iter().map(|(x, p)| (x[0], *p)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (x, p) in v {
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 += p,
                _ => out.push((x, p)),
            }
        }
        Ok(out)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (v, p) in &self.atoms {
            for a in 0..self.dim {
                m[a] += p * v[a];
            }
        }
        m
    }

    /// Empirical law of scalar samples.
    pub fn empirical(samples: &SampleSet) -> Result<Self> {
        check_dim(1, samples.dim())?;
        let mut v = samples.values().to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && v[j] == v[i] {
                j += 1;
            }
            atoms.push((v[i], (j - i) as f64 / n as f64));
            i = j;
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if let Some(last) = atoms.last_mut() {
            last.1 += 1.0 - total;
        }
        Self::scalar(atoms)
    }
}

/// n draws of an R^N-valued statistic, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    values: Vec<f64>,
    master_seed: u64,
}

impl SampleSet {
    pub fn new(dim: usize, values: Vec<f64>, master_seed: u64) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 {
            return invalid("sample set needs n ≥ 1 rows of the given dimension");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite sample".into()));
        }
        Ok(Self {
            dim,
            values,
            master_seed,
        })
    }

    pub fn scalar(values: Vec<f64>, master_seed: u64) -> Result<Self> {
        Self::new(1, values, master_seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn column(&self, a: usize) -> Vec<f64> {
        self.rows().map(|r| r[a]).collect()
    }

    /// Projection onto u.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.rows()
            .map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// P[a ≤ Z ≤ b] for a standard normal Z, accurate in both tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// ∫_{ya}^{yb} |x − y| φ_σ(y) dy in closed form, with the mass of the
/// interval supplied.
fn gap_integral(x: f64, ya: f64, yb: f64, sigma: f64, mass: f64) -> f64 {
    // antiderivative of y φ_σ(y) is −σ φ(y/σ)
    let m = |y: f64| {
        if y.is_infinite() {
            0.0
        } else {
            -sigma * std_normal_pdf(y / sigma)
        }
    };
    if x <= ya {
        (m(yb) - m(ya)) - x * mass
    } else if x >= yb {
        x * mass - (m(yb) - m(ya))
    } else {
        let lo_mass = normal_mass(ya / sigma, x / sigma);
        let hi_mass = normal_mass(x / sigma, yb / sigma);
        (x * lo_mass - (m(x) - m(ya))) + ((m(yb) - m(x)) - x * hi_mass)
    }
}

/// W1 between a scalar discrete law and N(0, σ²) by adaptive integration of
/// the quantile gap over each atom's probability interval.
pub fn w1_discrete_vs_gaussian(law: &DiscreteLaw, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return invalid("sigma2 must be positive");
    }
    let sigma = sigma2.sqrt();
    let atoms = law.sorted_scalar()?;
    let k = atoms.len() as f64;
    let tol = 1e-12 / k.max(1.0);
    let cap = 14.0 * sigma;
    let mut c = 0.0;
    let mut parts = Vec::with_capacity(atoms.len());
    for (i, (x, p)) in atoms.iter().enumerate() {
        let lo = c;
        c += p;
        let hi = if i + 1 == atoms.len() {
            1.0
        } else {
            c.min(1.0)
        };
        let ya = (sigma * std_normal_quantile(lo)).max(-cap);
        let yb = (sigma * std_normal_quantile(hi)).min(cap);
        if !(yb > ya) {
            parts.push(0.0);
            continue;
        }
        let g = |y: f64| (x - y).abs() * std_normal_pdf(y / sigma) / sigma;
        let v = if *x > ya && *x < yb {
            integrate(g, ya, *x, tol)? + integrate(g, *x, yb, tol)?
        } else {
            integrate(g, ya, yb, tol)?
        };
        parts.push(v);
    }
    Ok(stats::sum(parts))
}

/// W1 between the empirical law of scalar samples and N(0, σ²), integrating
/// the quantile gap exactly on every order-statistic interval.
pub fn w1_empirical_gaussian(samples: &SampleSet, sigma2: f64) -> Result<f64> {
    check_dim(1, samples.dim())?;
    w1_values_gaussian(samples.values(), sigma2)
}

/// Same as [`w1_empirical_gaussian`] on a raw slice.
pub fn w1_values_gaussian(values: &[f64], sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return invalid("sigma2 must be positive");
    }
    if values.len() < 2 {
        return invalid("need at least two samples");
    }
    let sigma = sigma2.sqrt();
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let nf = n as f64;
    let mut parts = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && v[j] == v[i] {
            j += 1;
        }
        let lo = i as f64 / nf;
        let hi = j as f64 / nf;
        let za = std_normal_quantile(lo);
        let zb = std_normal_quantile(hi);
        let mass = normal_mass(za, zb);
        parts.push(gap_integral(v[i], sigma * za, sigma * zb, sigma, mass));
        i = j;
    }
    Ok(stats::sum(parts).max(0.0))
}

/// W1 between two scalar discrete laws, ∫|F − G|.
pub fn w1_discrete_discrete(a: &DiscreteLaw, b: &DiscreteLaw) -> Result<f64> {
    let xa = a.sorted_scalar()?;
    let xb = b.sorted_scalar()?;
    let mut pts: Vec<f64> = xa.iter().chain(xb.iter()).map(|p| p.0).collect();
    pts.sort_by(|u, v| u.total_cmp(v));
    pts.dedup();
    let (mut ia, mut ib) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut parts = Vec::new();
    for w in 0..pts.len() {
        let t = pts[w];
        while ia < xa.len() && xa[ia].0 <= t {
            fa += xa[ia].1;
            ia += 1;
        }
        while ib < xb.len() && xb[ib].0 <= t {
            fb += xb[ib].1;
            ib += 1;
        }
        if w + 1 < pts.len() {
            parts.push((fa - fb).abs() * (pts[w + 1] - t));
        }
    }
    Ok(stats::sum(parts))
}

/// Total variation distance between two scalar discrete laws.
pub fn tv_discrete(a: &DiscreteLaw, b: &DiscreteLaw) -> Result<f64> {
    let xa = a.sorted_scalar()?;
    let xb = b.sorted_scalar()?;
    let (mut i, mut j) = (0, 0);
    let mut s = 0.0;
    while i < xa.len() || j < xb.len() {
        if j >= xb.len() || (i < xa.len() && xa[i].0 < xb[j].0) {
            s += xa[i].1;
            i += 1;
        } else if i >= xa.len() || xb[j].0 < xa[i].0 {
            s += xb[j].1;
            j += 1;
        } else {
            s += (xa[i].1 - xb[j].1).abs();
            i += 1;
            j += 1;
        }
    }
    Ok(0.5 * s)
}

/// Average of the one-dimensional estimator over given unit directions,
/// with projected variance u·Λu.
pub fn sliced_w1_with_directions(
    samples: &SampleSet,
    law: &GaussianLaw,
    directions: &[Vec<f64>],
) -> Result<f64> {
    check_dim(law.dim(), samples.dim())?;
    if directions.is_empty() {
        return invalid("need at least one direction");
    }
    let vals: Result<Vec<f64>> = directions
        .iter()
        .map(|u| {
            check_dim(law.dim(), u.len())?;
            let proj = samples.project(u);
            w1_values_gaussian(&proj, law.covariance().quad_form(u))
        })
        .collect();
    Ok(stats::mean(&vals?))
}

/// Random unit directions from a seed.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = crate::rng::stream(seed, 0);
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nrm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            if nrm > 1e-12 {
                break v.into_iter().map(|x| x / nrm).collect();
            }
        })
        .collect()
}

/// Sliced W1 proxy; for N = 1 this is the scalar estimator itself.
pub fn sliced_w1(
    samples: &SampleSet,
    law: &GaussianLaw,
    n_directions: usize,
    seed: u64,
) -> Result<f64> {
    if n_directions == 0 {
        return invalid("n_directions must be ≥ 1");
    }
    check_dim(law.dim(), samples.dim())?;
    if law.dim() == 1 {
        return w1_empirical_gaussian(samples, law.covariance().get(0, 0));
    }
    let dirs = random_directions(law.dim(), n_directions, seed);
    sliced_w1_with_directions(samples, law, &dirs)
}

/// max over the family of (sample mean of φ(X)) − ∫φ dN_Λ, with φ replaced
/// by φ_ε when ε > 0.
pub fn restricted_distance(
    samples: &SampleSet,
    law: &GaussianLaw,
    family: &[TestFunction],
    eps: f64,
) -> Result<f64> {
    if family.is_empty() {
        return invalid("family must be nonempty");
    }
    check_dim(law.dim(), samples.dim())?;
    if !(0.0..1.0).contains(&eps) {
        return invalid(format!("eps = {eps} outside [0, 1)"));
    }
    let engine = GaussianExpectation::new(law);
    let mut best = f64::NEG_INFINITY;
    for phi in family {
        check_dim(law.dim(), phi.dim())?;
        let target = engine.expect(&|z| phi.eval(z))?;
        let vals: Vec<f64> = if eps > 0.0 {
            let m = Mollifier::new(phi, eps, law)?;
            samples
                .values()
                .par_chunks(samples.dim())
                .map(|x| m.eval(x))
                .collect::<Result<Vec<f64>>>()?
        } else {
            samples
                .values()
                .par_chunks(samples.dim())
                .map(|x| phi.eval(x))
                .collect()
        };
        let gap = stats::mean(&vals) - target;
        best = best.max(gap);
    }
    Ok(best)
}

/// Identity covariance helper.
pub fn unit_law(dim: usize) -> Result<GaussianLaw> {
    Ok(GaussianLaw::new(SpdMatrix::identity(dim)?))
}
