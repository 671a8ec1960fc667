//! Stretched-exponential norms, Bennett-type tail bounds, the
//! close-to-Gaussian split and the moderate-deviation grouping.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::distance::{w1_values_gaussian, SampleSet};
use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::SpdMatrix;
use crate::multilevel::{
    DependenceGeometry, DependenceStructure, LevelIndex, MultilevelSample, PolicyTable,
};
use crate::rng;
use crate::special::{std_normal_cdf, std_normal_quantile};
use crate::stats;

/// Moment orders for stretched norms before the sample-size cap.
pub const P_GRID: [f64; 9] = [1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];

/// Smallest sample accepted by [`stretched_norm`].
pub const MIN_NORM_SAMPLES: usize = 100;

/// Largest usable moment order for n samples, ln(n)/2 (at least 1).
pub fn p_max(n: usize) -> f64 {
    ((n as f64).ln() / 2.0).max(1.0)
}

pub fn p_grid(n: usize) -> Vec<f64> {
    let cap = p_max(n);
    P_GRID.iter().copied().filter(|&p| p <= cap).collect()
}

/// max_p p^{-1/γ}(E|X|^p)^{1/p} over the capped grid.
#[derive(Clone, Debug, Serialize)]
pub struct StretchedNorm {
    pub gamma: f64,
    pub value: f64,
    pub p_grid: Vec<f64>,
    pub p_max: f64,
    /// Order attaining the maximum.
    pub argmax_p: f64,
    /// |X| is almost surely constant; the grid value is then exact.
    pub constant: bool,
}

/// γ̃ = γ/(γ+1).
pub fn gamma_tilde(gamma: f64) -> f64 {
    gamma / (gamma + 1.0)
}

/// Stretched norm of scalar values (or of |X| for the rows of a vector set).
pub fn stretched_norm(values: &[f64], gamma: f64) -> Result<StretchedNorm> {
    if !(gamma > 0.0) {
        return invalid(format!("gamma = {gamma} must be positive"));
    }
    if values.len() < MIN_NORM_SAMPLES {
        return invalid(format!(
            "need at least {MIN_NORM_SAMPLES} samples, got {}",
            values.len()
        ));
    }
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let scale = abs.iter().cloned().fold(0.0, f64::max);
    let grid = p_grid(values.len());
    let first = abs[0];
    let constant = abs.iter().all(|&v| v == first);
    let mut best = (0.0, grid[0]);
    if scale > 0.0 {
        for &p in &grid {
            let m = stats::mean(&abs.iter().map(|v| (v / scale).powf(p)).collect::<Vec<_>>());
            let v = p.powf(-1.0 / gamma) * scale * m.powf(1.0 / p);
            if v > best.0 {
                best = (v, p);
            }
        }
    }
    Ok(StretchedNorm {
        gamma,
        value: best.0,
        p_max: p_max(values.len()),
        p_grid: grid,
        argmax_p: best.1,
        constant,
    })
}

/// Stretched norm of |X| for an R^N-valued sample set.
pub fn stretched_norm_samples(samples: &SampleSet, gamma: f64) -> Result<StretchedNorm> {
    let norms: Vec<f64> = samples
        .rows()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    stretched_norm(&norms, gamma)
}

/// The same grid maximum computed from exact moments of N(0, σ²),
/// E|Z|^p = σ^p 2^{p/2} Γ((p+1)/2)/√π.
pub fn normal_stretched_norm(sigma: f64, gamma: f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&p| {
            let ln_m =
                p / 2.0 * 2f64.ln() + ln_gamma((p + 1.0) / 2.0) - 0.5 * std::f64::consts::PI.ln();
            p.powf(-1.0 / gamma) * sigma * (ln_m / p).exp()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BennettForm {
    Exact,
    Simplified,
}

fn bennett_h(x: f64) -> f64 {
    (1.0 + x) * x.ln_1p() - x
}

/// Upper bound on P[Σ X_i ≥ r] for independent centered |X_i| ≤ A with
/// total variance σ².
pub fn bennett_bound(sigma2: f64, a: f64, r: f64, form: BennettForm) -> Result<f64> {
    if !(sigma2 > 0.0 && a > 0.0 && r >= 0.0) {
        return invalid(format!(
            "bennett requires σ² > 0, A > 0, r ≥ 0 (got {sigma2}, {a}, {r})"
        ));
    }
    let e = match form {
        BennettForm::Exact => sigma2 / (a * a) * bennett_h(a * r / sigma2),
        BennettForm::Simplified => (r * r / (3.0 * sigma2)).min(r / (3.0 * a)),
    };
    Ok((-e).exp())
}

/// A tail bound with its validity flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailBound {
    pub bound: f64,
    pub valid: bool,
    /// Largest r for which the bound is asserted.
    pub radius: f64,
}

/// Radius below which the stretched-exponential sum bound applies.
pub fn iid_validity_radius(b: f64, gamma0: f64, v: f64, m: usize) -> f64 {
    let sv = v.sqrt();
    let first = sv / (b * (2.0 * (2.0 * m as f64).ln()).powf(1.0 / gamma0));
    let second = (sv / b).powf(gamma0 / (2.0 + gamma0));
    sv * first.min(second)
}

/// 3exp(−r²/10V) for sums of M independent centered variables with
/// E exp(|X_i|^γ₀/b^γ₀) ≤ 2 and V ≥ Var Σ X_i.
pub fn iid_tail_bound(b: f64, gamma0: f64, v: f64, m: usize, r: f64) -> Result<TailBound> {
    if !(v >= 0.0) || !(b > 0.0) || !(gamma0 > 0.0) || m == 0 {
        return invalid("iid tail bound requires V ≥ 0, b > 0, γ₀ > 0, M ≥ 1");
    }
    let bound = if v == 0.0 {
        if r > 0.0 {
            0.0
        } else {
            3.0
        }
    } else {
        3.0 * (-r * r / (10.0 * v)).exp()
    };
    let radius = iid_validity_radius(b, gamma0, v, m);
    Ok(TailBound {
        bound,
        valid: r <= radius,
        radius,
    })
}

/// Smallest b with mean exp((|x|/b)^γ₀) ≤ 2 over the values.
pub fn orlicz_scale(values: &[f64], gamma0: f64) -> Result<f64> {
    if !(gamma0 > 0.0) {
        return invalid("gamma must be positive");
    }
    if values.is_empty() {
        return invalid("empty sample");
    }
    let top = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0.0);
    }
    let ln_n = (values.len() as f64).ln();
    // log mean exp((|x|/b)^γ) via log-sum-exp.
    let excess = |b: f64| {
        let e: Vec<f64> = values.iter().map(|v| (v.abs() / b).powf(gamma0)).collect();
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + stats::sum(e.iter().map(|x| (x - mx).exp())).ln() - ln_n - 2f64.ln()
    };
    let mut lo = top * 1e-3;
    while excess(lo) <= 0.0 {
        lo *= 0.5;
    }
    let mut hi = top * (1.0 / 2f64.ln()).powf(1.0 / gamma0) * 1.0001;
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Budget C(γ₀)·√M·max norm for a sum of M independent components.
#[derive(Clone, Debug, Serialize)]
pub struct SumNormCertificate {
    pub m: usize,
    pub gamma0: f64,
    pub gamma_tilde: f64,
    pub max_norm: f64,
    pub budget: f64,
}

pub fn sum_norm_certificate(
    component_norms: &[f64],
    gamma0: f64,
    policy: &PolicyTable,
) -> Result<SumNormCertificate> {
    if component_norms.is_empty() {
        return invalid("need at least one component");
    }
    if !(gamma0 > 0.0) {
        return invalid("gamma must be positive");
    }
    let max_norm = component_norms.iter().cloned().fold(0.0, f64::max);
    let m = component_norms.len();
    Ok(SumNormCertificate {
        m,
        gamma0,
        gamma_tilde: gamma_tilde(gamma0),
        max_norm,
        budget: policy.get("C_gamma") * (m as f64).sqrt() * max_norm,
    })
}

/// Intermediate-scale grouping of the index set.
#[derive(Clone, Debug, Serialize)]
pub struct Grouping {
    pub ell: usize,
    /// Unclamped ⌊log₂(ℓ/(4K log₂L))⌋.
    pub m0_raw: i64,
    pub m0: usize,
    /// p(m) per level.
    pub p: Vec<usize>,
    /// Group corners i ∈ ℓZ^d ∩ [0, L)^d.
    pub corners: Vec<Vec<usize>>,
    /// Index positions per group.
    pub groups: Vec<Vec<usize>>,
    /// Index positions of R^m per level.
    pub remainders: Vec<Vec<usize>>,
}

/// Smallest p with 2^p ≥ 2^{m+2}K log₂L, capped at ⌈log₂L⌉.
fn p_of(structure: &DependenceStructure, m: usize) -> usize {
    let target = (1u64 << (m + 2)) as f64 * structure.k * structure.log_l();
    let cap = structure.log_l().ceil() as usize;
    let mut p = 0usize;
    while ((1u64 << p) as f64) < target && p < cap {
        p += 1;
    }
    p
}

fn for_each_point(d: usize, counts: &[usize], mut f: impl FnMut(&[usize])) {
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; d];
    for mut t in 0..total {
        for a in (0..d).rev() {
            idx[a] = t % counts[a];
            t /= counts[a];
        }
        f(&idx);
    }
}

/// Groups G_i over levels m ≤ m₀ and interior offsets
/// j ∈ 2^mZ^d ∩ [2^{p(m)}, ℓ − 2^{p(m)})^d; all other indices are remainders.
pub fn moderate_grouping(structure: &DependenceStructure, ell: usize) -> Result<Grouping> {
    if ell == 0 || !ell.is_power_of_two() {
        return invalid(format!("ell = {ell} is not a power of two"));
    }
    if ell > structure.side || structure.side % ell != 0 {
        return invalid(format!("ell = {ell} must divide L = {}", structure.side));
    }
    let d = structure.d;
    let raw = (ell as f64 / (4.0 * structure.k * structure.log_l()))
        .log2()
        .floor() as i64;
    if raw < 0 {
        log::warn!("ell = {ell} ≤ 4K log L: grouping degenerates to remainders only");
    }
    let m0 = raw.max(0) as usize;
    let m0 = m0.min(structure.max_level());
    let p: Vec<usize> = (0..=structure.max_level())
        .map(|m| p_of(structure, m))
        .collect();
    let per = structure.side / ell;
    let mut corners: Vec<Vec<usize>> = Vec::new();
    for_each_point(d, &vec![per; d], |c| {
        corners.push(c.iter().map(|v| v * ell).collect())
    });
    let mut owner = vec![usize::MAX; structure.len()];
    let mut groups = vec![Vec::new(); corners.len()];
    if raw >= 0 {
        for (g, corner) in corners.iter().enumerate() {
            for m in 0..=m0 {
                let step = 1usize << m;
                let lo = 1usize << p[m];
                let offs: Vec<usize> = (0..ell)
                    .step_by(step)
                    .filter(|&j| j >= lo && j + lo < ell)
                    .collect();
                if offs.is_empty() {
                    continue;
                }
                for_each_point(d, &vec![offs.len(); d], |t| {
                    let y: Vec<usize> = (0..d).map(|a| corner[a] + offs[t[a]]).collect();
                    let pos = structure
                        .position(&LevelIndex::new(m, y))
                        .expect("interior index is valid");
                    owner[pos] = g;
                    groups[g].push(pos);
                });
            }
        }
    }
    let mut remainders = vec![Vec::new(); structure.max_level() + 1];
    for (pos, &o) in owner.iter().enumerate() {
        if o == usize::MAX {
            remainders[structure.level_of(pos)].push(pos);
        }
    }
    Ok(Grouping {
        ell,
        m0_raw: raw,
        m0,
        p,
        corners,
        groups,
        remainders,
    })
}

impl Grouping {
    pub fn group_values(&self, sample: &MultilevelSample) -> Vec<Vec<f64>> {
        self.groups
            .iter()
            .map(|g| sum_positions(sample, g))
            .collect()
    }

    pub fn remainder_values(&self, sample: &MultilevelSample) -> Vec<Vec<f64>> {
        self.remainders
            .iter()
            .map(|r| sum_positions(sample, r))
            .collect()
    }

    /// Σ_{m ≤ m₀} R^m.
    pub fn small_remainder(&self, sample: &MultilevelSample) -> Vec<f64> {
        let all: Vec<usize> = self.remainders[..=self.m0].concat();
        sum_positions(sample, &all)
    }

    /// Σ_{m > m₀} R^m.
    pub fn big_remainder(&self, sample: &MultilevelSample) -> Vec<f64> {
        let all: Vec<usize> = self.remainders[self.m0 + 1..].concat();
        sum_positions(sample, &all)
    }

    /// Σ_i G_i + Σ_m R^m.
    pub fn reassemble(&self, sample: &MultilevelSample) -> Vec<f64> {
        let mut out = vec![0.0; sample.dim];
        for v in self
            .group_values(sample)
            .into_iter()
            .chain(self.remainder_values(sample))
        {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
        out
    }

    /// Every index appears exactly once among groups and remainders.
    pub fn is_partition(&self, n_indices: usize) -> bool {
        let mut seen = vec![0u8; n_indices];
        for pos in self.groups.iter().chain(&self.remainders).flatten() {
            if *pos >= n_indices {
                return false;
            }
            seen[*pos] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }

    /// Lattice cells in the union of the support boxes of a group.
    pub fn group_support(&self, structure: &DependenceStructure, g: usize) -> Vec<usize> {
        let side = structure.side;
        let mut mark = vec![false; side.pow(structure.d as u32)];
        for &pos in &self.groups[g] {
            let idx = structure.index_at(pos);
            let axes: Vec<Vec<usize>> = idx
                .y
                .iter()
                .map(|&y| structure.box_cells_1d(idx.m, y))
                .collect();
            let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
            for_each_point(structure.d, &counts, |t| {
                let cell = (0..structure.d).fold(0, |acc, a| acc * side + axes[a][t[a]]);
                mark[cell] = true;
            });
        }
        mark.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(c, _)| c)
            .collect()
    }

    /// Support sets of distinct groups do not intersect.
    pub fn supports_disjoint(&self, structure: &DependenceStructure) -> bool {
        let mut owner = vec![usize::MAX; structure.side.pow(structure.d as u32)];
        for g in 0..self.groups.len() {
            for c in self.group_support(structure, g) {
                if owner[c] != usize::MAX && owner[c] != g {
                    return false;
                }
                owner[c] = g;
            }
        }
        true
    }
}

fn sum_positions(sample: &MultilevelSample, positions: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; sample.dim];
    for &p in positions {
        for (o, x) in out.iter_mut().zip(sample.value(p)) {
            *o += x;
        }
    }
    out
}

/// Predicted stretched norms of the remainders:
/// (B(K log L)^d ℓ^{-d/2}L^{-d/2}, B(K log L)^{(d+3)/2}ℓ^{-1/2}L^{-d/2}).
pub fn predicted_remainder_norms(structure: &DependenceStructure, ell: usize) -> (f64, f64) {
    let d = structure.d as f64;
    let kl = structure.k * structure.log_l();
    let l = structure.side as f64;
    let e = ell as f64;
    let big = structure.b * kl.powf(d) * e.powf(-d / 2.0) * l.powf(-d / 2.0);
    let small = structure.b * kl.powf((d + 3.0) / 2.0) * e.powf(-0.5) * l.powf(-d / 2.0);
    (big, small)
}

/// Aggregate Gaussian and the tail bound for the non-Gaussian residual.
#[derive(Clone, Debug, Serialize)]
pub struct CloseToGaussian {
    pub m: usize,
    pub dim: usize,
    pub tau: f64,
    pub b: f64,
    pub gamma0: f64,
    /// Row-major Λ = Σ Λ_m.
    pub lambda: Vec<f64>,
    /// Measured W1 of each group to its Gaussian (scalar groups; projected
    /// on the first axis otherwise).
    pub group_w1: Vec<f64>,
    /// Every measured W1 is at most τb.
    pub premise_holds: bool,
    pub radius: f64,
}

impl CloseToGaussian {
    fn q(&self) -> f64 {
        if self.tau == 0.0 {
            0.0
        } else {
            self.tau * self.tau.ln().abs().powf(1.0 / self.gamma0)
        }
    }

    /// 3N exp(−r²/(10Nτ|ln τ|^{1/γ₀}Mb²)).
    pub fn z_bound(&self, r: f64) -> TailBound {
        let n = self.dim as f64;
        let q = self.q();
        let denom = 10.0 * n * q * self.m as f64 * self.b * self.b;
        let bound = if denom == 0.0 {
            if r > 0.0 {
                0.0
            } else {
                3.0 * n
            }
        } else {
            3.0 * n * (-r * r / denom).exp()
        };
        TailBound {
            bound,
            valid: r <= self.radius,
            radius: self.radius,
        }
    }
}

/// Validity radius of the residual bound.
pub fn close_to_gaussian_radius(dim: usize, m: usize, tau: f64, b: f64, gamma0: f64) -> f64 {
    let q = if tau == 0.0 {
        0.0
    } else {
        tau * tau.ln().abs().powf(1.0 / gamma0)
    };
    let mf = m as f64;
    let first = (mf * q).sqrt() / (2.0 * (2.0 * mf).ln()).powf(1.0 / gamma0);
    let second = (q * mf).powf(gamma0 / (4.0 + 2.0 * gamma0));
    (dim as f64 * q).sqrt() * mf.sqrt() * b * first.min(second)
}

/// Sums the group covariances and evaluates the residual bound parameters.
pub fn close_to_gaussian_split(
    group_samples: &[SampleSet],
    group_lambdas: &[SpdMatrix],
    tau: f64,
    b: f64,
    gamma0: f64,
) -> Result<CloseToGaussian> {
    if !(0.0..=0.5).contains(&tau) {
        return invalid(format!("tau = {tau} outside [0, 1/2]"));
    }
    if !(b > 0.0 && gamma0 > 0.0) {
        return invalid("b and gamma must be positive");
    }
    if group_samples.is_empty() {
        return invalid("no groups");
    }
    check_dim(group_samples.len(), group_lambdas.len())?;
    let dim = group_lambdas[0].dim();
    let mut lambda = vec![0.0; dim * dim];
    let mut group_w1 = Vec::with_capacity(group_samples.len());
    for (s, l) in group_samples.iter().zip(group_lambdas) {
        check_dim(dim, l.dim())?;
        check_dim(dim, s.dim())?;
        for (a, v) in lambda.iter_mut().zip(l.entries()) {
            *a += v;
        }
        group_w1.push(w1_values_gaussian(&s.column(0), l.get(0, 0))?);
    }
    let premise_holds = group_w1.iter().all(|&w| w <= tau * b * (1.0 + 1e-12));
    let m = group_samples.len();
    Ok(CloseToGaussian {
        m,
        dim,
        tau,
        b,
        gamma0,
        lambda,
        group_w1,
        premise_holds,
        radius: close_to_gaussian_radius(dim, m, tau, b, gamma0),
    })
}

/// Residuals X − Y: quantile coupling with N(0, σ²) for scalar samples,
/// an independent N(0, Λ) draw otherwise.
pub fn coupling_residuals(samples: &SampleSet, lambda: &SpdMatrix, seed: u64) -> Result<Vec<f64>> {
    check_dim(samples.dim(), lambda.dim())?;
    let n = samples.n();
    if samples.dim() == 1 {
        let sigma = lambda.get(0, 0).sqrt();
        let mut order: Vec<usize> = (0..n).collect();
        let v = samples.values();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut res = vec![0.0; n];
        for (rank, &k) in order.iter().enumerate() {
            let y = sigma * std_normal_quantile((rank as f64 + 0.5) / n as f64);
            res[k] = (v[k] - y).abs();
        }
        return Ok(res);
    }
    let root = lambda.sqrt_matrix();
    let dim = samples.dim();
    let res = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            use rand_distr::{Distribution, StandardNormal};
            let mut r = rng::stream(seed, k);
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let x = samples.row(k as usize);
            (0..dim)
                .map(|a| {
                    let y: f64 = (0..dim).map(|c| root[a * dim + c] * z[c]).sum();
                    (x[a] - y).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(res)
}

/// One CSV row of a tail comparison.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TailRow {
    pub kind: String,
    pub preset: String,
    pub r: f64,
    pub empirical_tail: f64,
    pub bound: f64,
    pub valid_flag: bool,
    pub slack: f64,
}

impl TailRow {
    /// Empirical tail within the bound up to the Monte Carlo slack.
    pub fn dominated(&self) -> bool {
        !self.valid_flag || self.empirical_tail <= self.bound + self.slack
    }
}

/// Fraction of values with v ≥ r.
pub fn empirical_tail(values: &[f64], r: f64) -> f64 {
    values.iter().filter(|&&v| v >= r).count() as f64 / values.len() as f64
}

/// Monte Carlo slack 3√(p̂(1−p̂)/n).
pub fn mc_slack(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Configuration for tail checks of sums of independent draws from a pool.
#[derive(Clone, Debug)]
pub struct PoolSumConfig {
    pub m: usize,
    pub trials: usize,
    pub gamma0: f64,
    pub seed: u64,
    pub r_points: usize,
}

/// Compares Bennett (both forms) and the stretched-exponential sum bound
/// with empirical tails of sums of M independent draws from the centered
/// empirical law of `pool`.
pub fn pool_sum_tails(pool: &[f64], preset: &str, cfg: &PoolSumConfig) -> Result<Vec<TailRow>> {
    if pool.len() < 2 || cfg.m == 0 || cfg.trials == 0 || cfg.r_points == 0 {
        return invalid("pool sums need ≥ 2 pool values, M ≥ 1, trials ≥ 1 and r points ≥ 1");
    }
    let mean = stats::mean(pool);
    let centered: Vec<f64> = pool.iter().map(|v| v - mean).collect();
    let var = stats::sum(centered.iter().map(|v| v * v)) / centered.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Numerical("pool has zero variance".into()));
    }
    let a = centered.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let b = orlicz_scale(&centered, cfg.gamma0)?;
    let sigma2 = cfg.m as f64 * var;
    let n = centered.len();
    let sums: Vec<f64> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|k| {
            use rand::Rng as _;
            let mut r = rng::stream(cfg.seed, k);
            (0..cfg.m).map(|_| centered[r.gen_range(0..n)]).sum()
        })
        .collect();
    let abs: Vec<f64> = sums.iter().map(|v| v.abs()).collect();
    let sd = sigma2.sqrt();
    let mut rows = Vec::new();
    for i in 1..=cfg.r_points {
        let r = sd * 5.0 * i as f64 / cfg.r_points as f64;
        let upper = empirical_tail(&sums, r);
        let two = empirical_tail(&abs, r);
        for form in [BennettForm::Exact, BennettForm::Simplified] {
            let bound = bennett_bound(sigma2, a, r, form)?;
            rows.push(TailRow {
                kind: format!(
                    "bennett-{}",
                    if form == BennettForm::Exact {
                        "exact"
                    } else {
                        "simplified"
                    }
                ),
                preset: preset.to_string(),
                r,
                empirical_tail: upper,
                bound,
                valid_flag: true,
                slack: mc_slack(upper, cfg.trials),
            });
        }
        let t = iid_tail_bound(b, cfg.gamma0, sigma2, cfg.m, r)?;
        rows.push(TailRow {
            kind: "stretched-sum".into(),
            preset: preset.to_string(),
            r,
            empirical_tail: two,
            bound: t.bound,
            valid_flag: t.valid,
            slack: mc_slack(two, cfg.trials),
        });
    }
    Ok(rows)
}

/// Tail comparison P[|X − EX| ≥ r] ≤ P[|Y| ≥ r − s] + P[|Z| ≥ s] with
/// s = r/2, Y the Gaussian of the split and Z the coupling residual.
pub fn moderate_tail_rows(
    samples: &SampleSet,
    split: &CloseToGaussian,
    preset: &str,
    r_grid: &[f64],
    seed: u64,
) -> Result<Vec<TailRow>> {
    check_dim(1, samples.dim())?;
    let x = samples.column(0);
    let mean = stats::mean(&x);
    let centered: Vec<f64> = x.iter().map(|v| (v - mean).abs()).collect();
    let lambda = SpdMatrix::new(1, vec![split.lambda[0]])?;
    let shifted = SampleSet::scalar(x.iter().map(|v| v - mean).collect(), samples.master_seed())?;
    let z = coupling_residuals(&shifted, &lambda, seed)?;
    let sigma = split.lambda[0].sqrt();
    let n = x.len();
    let mut rows = Vec::with_capacity(2 * r_grid.len());
    for &r in r_grid {
        let s = 0.5 * r;
        let gauss = 2.0 * (1.0 - std_normal_cdf((r - s) / sigma));
        let zb = split.z_bound(s);
        let emp = empirical_tail(&centered, r);
        rows.push(TailRow {
            kind: "moderate".into(),
            preset: preset.to_string(),
            r,
            empirical_tail: emp,
            bound: gauss + zb.bound.min(1.0),
            valid_flag: zb.valid,
            slack: mc_slack(emp, n),
        });
        let ez = empirical_tail(&z, s);
        rows.push(TailRow {
            kind: "residual".into(),
            preset: preset.to_string(),
            r: s,
            empirical_tail: ez,
            bound: zb.bound,
            valid_flag: zb.valid,
            slack: mc_slack(ez, n),
        });
    }
    Ok(rows)
}
