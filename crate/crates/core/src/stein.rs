//! Smoothed Stein solutions f_ε for a centered Gaussian target, their
//! derivative representations, the mollified Stein residual and the
//! oscillation majorants.
//!
//! f_ε(x) = ½ ∫_{ε²}^1 (E φ(√(1−s)x − √s z) − E φ) (1−s)^{-1} ds, and the
//! k-th derivative is ½ ∫ w_k(s) E[φ(√(1−s)x − √s z) (∇^k N_Λ / N_Λ)(z)] ds
//! with w_1 = 1/√(s(1−s)), w_2 = 1/s, w_3 = √(1−s)/s^{3/2}.

use rayon::prelude::*;
use serde::Serialize;

use crate::distance::{Mollifier, TestFunction};
use crate::error::{check_dim, invalid, Error, Result};
use crate::gaussian::{BallSampler, GaussianLaw};
use crate::linalg::{unit_directions, SpdMatrix, Tensor, MAX_DIM};
use crate::quadrature::{gauss_legendre, GaussianRule};

/// Gauss–Legendre order of each s-panel.
pub const PANEL_ORDER: usize = 8;
/// Upper end of the t = −ln(1−s) range.
pub const T_MAX: f64 = 50.0;

/// Node counts for the s- and z-integrations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QuadratureSpec {
    pub s_nodes: usize,
    pub z_nodes_per_axis: usize,
    pub refinement_factor: usize,
}

impl QuadratureSpec {
    pub fn new(s_nodes: usize, z_nodes_per_axis: usize) -> Result<Self> {
        if s_nodes < 16 || z_nodes_per_axis < 16 {
            return invalid("quadrature spec needs s_nodes ≥ 16 and z_nodes_per_axis ≥ 16");
        }
        Ok(Self {
            s_nodes,
            z_nodes_per_axis,
            refinement_factor: 2,
        })
    }

    pub fn default_for(dim: usize) -> Self {
        match dim {
            1 => Self::new(128, 64),
            2 => Self::new(96, 32),
            _ => Self::new(64, 16),
        }
        .expect("valid default")
    }

    /// Cheaper rule for nested integrals.
    pub fn fast_for(dim: usize) -> Self {
        match dim {
            1 => Self::new(64, 40),
            _ => Self::new(64, 20),
        }
        .expect("valid fast spec")
    }

    pub fn refined(&self) -> Self {
        Self {
            s_nodes: self.s_nodes * self.refinement_factor,
            z_nodes_per_axis: self.z_nodes_per_axis * self.refinement_factor,
            refinement_factor: self.refinement_factor,
        }
    }
}

#[derive(Clone, Debug)]
struct SNode {
    sqrt_one_minus: f64,
    sqrt_s: f64,
    /// Full weights (panel weight, jacobian and ½ included) for orders 0..=3.
    w: [f64; 4],
}

fn s_nodes(eps: f64, total: usize) -> Vec<SNode> {
    let panels = total.div_ceil(PANEL_ORDER).max(2);
    let gl = gauss_legendre(PANEL_ORDER);
    let mut out = Vec::new();
    let s_lo = eps * eps;
    let split = 0.5f64.max(s_lo);
    let (pa, pb) = if s_lo < 0.5 {
        let a = (panels / 4).max(1);
        (a, panels - a)
    } else {
        (0, panels)
    };
    let push = |s: f64, one_minus: f64, jac: f64| {
        let sq1 = one_minus.sqrt();
        let sqs = s.sqrt();
        let w0 = 0.5 * jac / one_minus;
        let w1 = 0.5 * jac / (sqs * sq1);
        let w2 = 0.5 * jac / s;
        let w3 = 0.5 * jac * sq1 / (s * sqs);
        (sq1, sqs, [w0, w1, w2, w3])
    };
    // v = ln s on [ln ε², ln ½]
    if pa > 0 {
        let (a, b) = (s_lo.ln(), split.ln());
        let h = (b - a) / pa as f64;
        for p in 0..pa {
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                let v = a + h * (p as f64 + 0.5 * (x + 1.0));
                let s = v.exp();
                let one_minus = -v.exp_m1();
                let (sq1, sqs, mut ws) = push(s, one_minus, s);
                ws.iter_mut().for_each(|q| *q *= 0.5 * h * w);
                out.push(SNode {
                    sqrt_one_minus: sq1,
                    sqrt_s: sqs,
                    w: ws,
                });
            }
        }
    }
    // t = −ln(1−s) on [−ln(1−split), T_MAX]
    let a = -(-split).ln_1p();
    let b = T_MAX.max(a + 1.0);
    // quadratically graded panels, fine near the start
    let edge = |k: usize| a + (b - a) * (k as f64 / pb as f64).powi(2);
    for p in 0..pb {
        let (lo, hi) = (edge(p), edge(p + 1));
        let h = hi - lo;
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let t = lo + 0.5 * h * (x + 1.0);
            let one_minus = (-t).exp();
            let s = -(-t).exp_m1();
            let (sq1, sqs, mut ws) = push(s, one_minus, one_minus);
            ws.iter_mut().for_each(|q| *q *= 0.5 * h * w);
            out.push(SNode {
                sqrt_one_minus: sq1,
                sqrt_s: sqs,
                w: ws,
            });
        }
    }
    out
}

/// Values and derivatives of f_ε at one point.
#[derive(Clone, Debug)]
pub struct SteinJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Tensor,
    pub third: Tensor,
}

/// f_ε for a test function, target law and smoothing parameter.
#[derive(Clone, Debug)]
pub struct SteinSolution {
    phi: TestFunction,
    law: GaussianLaw,
    eps: f64,
    quad: QuadratureSpec,
    zrule: GaussianRule,
    /// Per z-node: ∇N/N (N), ∇²N/N (N²), ∇³N/N (N³).
    kernels: Vec<f64>,
    snodes: Vec<SNode>,
    mean_phi: f64,
    /// One-dimensional solution for the profile of a ridge φ(x) = g(u·x).
    ridge: Option<(Vec<f64>, Box<SteinSolution>)>,
}

fn kernel_len(n: usize) -> usize {
    n + n * n + n * n * n
}

fn kernels_at(inv: &[f64], n: usize, z: &[f64], out: &mut Vec<f64>) {
    let a: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| inv[i * n + j] * z[j]).sum())
        .collect();
    for i in 0..n {
        out.push(-a[i]);
    }
    for i in 0..n {
        for j in 0..n {
            out.push(a[i] * a[j] - inv[i * n + j]);
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let sym = a[i] * inv[j * n + k] + a[j] * inv[i * n + k] + a[k] * inv[i * n + j];
                out.push(sym - a[i] * a[j] * a[k]);
            }
        }
    }
}

impl SteinSolution {
    pub fn new(
        phi: &TestFunction,
        law: &GaussianLaw,
        eps: f64,
        quad: QuadratureSpec,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return invalid(format!("eps = {eps} outside (0, 1)"));
        }
        if quad.s_nodes < 16 || quad.z_nodes_per_axis < 16 {
            return invalid("invalid quadrature spec");
        }
        let n = law.dim();
        check_dim(n, phi.dim())?;
        if let (true, Some(r)) = (n > 1, phi.ridge()) {
            let var = law.covariance().quad_form(&r.direction);
            let g = r.profile.clone();
            let profile = TestFunction::new(1, phi.label(), phi.lipschitz(), move |t| g(t[0]));
            let law1 = GaussianLaw::new(SpdMatrix::new(1, vec![var])?);
            let inner = Self::new(&profile, &law1, eps, quad)?;
            return Ok(Self {
                phi: phi.clone(),
                law: law.clone(),
                eps,
                quad,
                zrule: GaussianRule {
                    dim: n,
                    nodes: Vec::new(),
                    weights: Vec::new(),
                },
                kernels: Vec::new(),
                snodes: Vec::new(),
                mean_phi: inner.mean_phi,
                ridge: Some((r.direction.clone(), Box::new(inner))),
            });
        }
        let zrule = if n == 1 {
            GaussianRule::legendre_1d(law.covariance().get(0, 0), quad.z_nodes_per_axis / 2)
        } else {
            GaussianRule::new(law.covariance(), quad.z_nodes_per_axis)
        };
        let inv = law.covariance().inverse().to_vec();
        let mut kernels = Vec::with_capacity(zrule.len() * kernel_len(n));
        for z in zrule.nodes.chunks(n) {
            kernels_at(&inv, n, z, &mut kernels);
        }
        let mean_phi = zrule.expect(|z| phi.eval(z));
        if !mean_phi.is_finite() {
            return Err(Error::Numerical("E[φ] is not finite".into()));
        }
        Ok(Self {
            phi: phi.clone(),
            law: law.clone(),
            eps,
            quad,
            zrule,
            kernels,
            snodes: s_nodes(eps, quad.s_nodes),
            mean_phi,
            ridge: None,
        })
    }

    pub fn with_default_quadrature(
        phi: &TestFunction,
        law: &GaussianLaw,
        eps: f64,
    ) -> Result<Self> {
        Self::new(phi, law, eps, QuadratureSpec::default_for(law.dim()))
    }

    pub fn phi(&self) -> &TestFunction {
        &self.phi
    }

    pub fn law(&self) -> &GaussianLaw {
        &self.law
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        self.quad
    }

    /// Cached ∫φ dN_Λ.
    pub fn mean_phi(&self) -> f64 {
        self.mean_phi
    }

    pub fn refined(&self) -> Result<Self> {
        Self::new(&self.phi, &self.law, self.eps, self.quad.refined())
    }

    /// Value and derivatives up to `max_order` (unused orders are zero).
    pub fn jet_upto(&self, x: &[f64], max_order: usize) -> Result<SteinJet> {
        let n = self.law.dim();
        check_dim(n, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("x must be finite");
        }
        if let Some((u, inner)) = &self.ridge {
            let t: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
            let j = inner.jet_upto(&[t], max_order)?;
            let (d1, d2, d3) = (j.gradient[0], j.hessian.data()[0], j.third.data()[0]);
            let mut h = Tensor::zeros(n, 2);
            let mut th = Tensor::zeros(n, 3);
            for a in 0..n {
                for b in 0..n {
                    h.data_mut()[a * n + b] = d2 * u[a] * u[b];
                    for c in 0..n {
                        th.data_mut()[(a * n + b) * n + c] = d3 * u[a] * u[b] * u[c];
                    }
                }
            }
            return Ok(SteinJet {
                value: j.value,
                gradient: u.iter().map(|a| d1 * a).collect(),
                hessian: h,
                third: th,
            });
        }
        let kl = kernel_len(n);
        let (o1, o2, o3) = (0, n, n + n * n);
        let mut value = 0.0;
        let mut d = vec![0.0; kl];
        let mut acc = vec![0.0; kl];
        let mut y = [0.0f64; MAX_DIM];
        let width = match max_order {
            0 => 0,
            1 => n,
            2 => n + n * n,
            _ => kl,
        };
        for sn in &self.snodes {
            let mut acc0 = 0.0;
            acc[..width].iter_mut().for_each(|v| *v = 0.0);
            for (q, (z, wz)) in self
                .zrule
                .nodes
                .chunks(n)
                .zip(&self.zrule.weights)
                .enumerate()
            {
                for a in 0..n {
                    y[a] = sn.sqrt_one_minus * x[a] - sn.sqrt_s * z[a];
                }
                let v = wz * self.phi.eval(&y[..n]);
                acc0 += v;
                let k = &self.kernels[q * kl..q * kl + width];
                for (t, kv) in acc[..width].iter_mut().zip(k) {
                    *t += v * kv;
                }
            }
            value += sn.w[0] * (acc0 - self.mean_phi);
            for i in 0..width {
                let w = if i < o2 {
                    sn.w[1]
                } else if i < o3 {
                    sn.w[2]
                } else {
                    sn.w[3]
                };
                d[i] += w * acc[i];
            }
        }
        let _ = o1;
        let jet = SteinJet {
            value,
            gradient: d[..n].to_vec(),
            hessian: Tensor::from_data(n, 2, d[o2..o3].to_vec())?,
            third: Tensor::from_data(n, 3, d[o3..].to_vec())?,
        };
        if !jet.value.is_finite() || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite Stein jet at {x:?}")));
        }
        Ok(jet)
    }

    pub fn jet(&self, x: &[f64]) -> Result<SteinJet> {
        self.jet_upto(x, 3)
    }
}

/// f_ε(x).
pub fn stein_eval(sol: &SteinSolution, x: &[f64]) -> Result<f64> {
    Ok(sol.jet_upto(x, 0)?.value)
}

/// f_ε(x) with a node-doubling comparison; fails when the refined value
/// differs by more than 1e-6.
pub fn stein_eval_checked(sol: &SteinSolution, x: &[f64]) -> Result<f64> {
    let v = stein_eval(sol, x)?;
    let w = stein_eval(&sol.refined()?, x)?;
    if (v - w).abs() > 1e-6 {
        return Err(Error::Numerical(format!(
            "Stein solution not converged at {x:?}: {v} vs {w}"
        )));
    }
    Ok(v)
}

pub fn stein_gradient(sol: &SteinSolution, x: &[f64]) -> Result<Vec<f64>> {
    Ok(sol.jet_upto(x, 1)?.gradient)
}

/// ∇^k f_ε(x) for k ∈ {1, 2, 3}.
pub fn stein_derivative(sol: &SteinSolution, x: &[f64], order: usize) -> Result<Tensor> {
    match order {
        1 => {
            let g = stein_gradient(sol, x)?;
            Tensor::from_data(g.len(), 1, g)
        }
        2 => Ok(sol.jet_upto(x, 2)?.hessian),
        3 => Ok(sol.jet_upto(x, 3)?.third),
        _ => invalid(format!("unsupported derivative order {order}")),
    }
}

/// |−Λ:∇²f_ε + x·∇f_ε − φ_ε + ∫φ_ε dN_Λ| at x.
pub fn stein_residual(sol: &SteinSolution, x: &[f64]) -> Result<f64> {
    let jet = sol.jet_upto(x, 2)?;
    let n = x.len();
    let cov = sol.law.covariance().entries();
    let trace: f64 = (0..n * n).map(|k| cov[k] * jet.hessian.data()[k]).sum();
    let drift: f64 = x.iter().zip(&jet.gradient).map(|(a, b)| a * b).sum();
    let moll = Mollifier::new(&sol.phi, sol.eps, &sol.law)?;
    let pe = moll.eval(x)?;
    Ok((-trace + drift - pe + sol.mean_phi).abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct ThirdDerivativeRow {
    pub point: Vec<f64>,
    pub norm: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThirdDerivativeReport {
    pub bound: f64,
    pub rows: Vec<ThirdDerivativeRow>,
    pub max_ratio: f64,
}

/// Uniform third-derivative constant 15|Λ^{-1}|ε^{-N}.
pub fn third_derivative_bound(law: &GaussianLaw, eps: f64) -> f64 {
    15.0 * law.covariance().inv_norm() * eps.powi(-(law.dim() as i32))
}

/// Checks |∇³f_ε(x)| against 15|Λ^{-1}|ε^{-N} at each point.
pub fn third_derivative_certificate(
    sol: &SteinSolution,
    points: &[Vec<f64>],
) -> Result<ThirdDerivativeReport> {
    let bound = third_derivative_bound(&sol.law, sol.eps);
    let rows: Vec<ThirdDerivativeRow> = points
        .par_iter()
        .map(|p| {
            let t = sol.jet_upto(p, 3)?.third;
            let norm = t.norm();
            Ok(ThirdDerivativeRow {
                point: p.clone(),
                norm,
                ratio: norm / bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_ratio = rows.iter().fold(0.0f64, |a, r| a.max(r.ratio));
    Ok(ThirdDerivativeReport {
        bound,
        rows,
        max_ratio,
    })
}

/// Which oscillation majorant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MajorantKind {
    /// 2(N_{δ²Id} * osc_{Kδ}∇²f_ε)
    H,
    /// |∇³f_ε| + 2(N_{δ²Id} * osc_{Kδ}∇³f_ε)
    HPrime,
}

/// Sampled oscillation of a symmetric tensor field: the largest spread of
/// T(u,…,u) over the samples, maximized over directions.
pub fn tensor_oscillation(values: &[Tensor], directions: &[f64]) -> f64 {
    let Some(first) = values.first() else {
        return 0.0;
    };
    let n = first.dim();
    let mut best: f64 = 0.0;
    for u in directions.chunks(n) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in values {
            let v = t.contract(u);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        best = best.max(hi - lo);
    }
    best
}

/// Evaluation settings for the majorants.
#[derive(Clone, Debug)]
pub struct MajorantSampler {
    ball: BallSampler,
    directions: Vec<f64>,
    conv_nodes: usize,
}

impl MajorantSampler {
    pub fn new(dim: usize) -> Self {
        let (pts, dirs, conv) = match dim {
            1 => (64, 1, 16),
            2 => (48, 32, 8),
            _ => (32, 64, 4),
        };
        Self {
            ball: BallSampler::with_points(dim, pts),
            directions: unit_directions(dim, dirs),
            conv_nodes: conv,
        }
    }

    pub fn with_parts(ball: BallSampler, directions: Vec<f64>, conv_nodes: usize) -> Self {
        Self {
            ball,
            directions,
            conv_nodes,
        }
    }

    /// Sampled osc_r ∇^k f_ε(x), k ∈ {2, 3}.
    pub fn oscillation(&self, sol: &SteinSolution, order: usize, x: &[f64], r: f64) -> Result<f64> {
        let n = x.len();
        let pts = self.ball.points(x, r);
        let vals = pts
            .chunks(n)
            .map(|p| {
                let j = sol.jet_upto(p, order)?;
                Ok(if order == 2 { j.hessian } else { j.third })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(tensor_oscillation(&vals, &self.directions))
    }
}

/// K = 2√N + 1.
pub fn majorant_radius_factor(dim: usize) -> f64 {
    2.0 * (dim as f64).sqrt() + 1.0
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid("delta must be positive");
    }
    Ok(())
}

/// H_δ^ε(x) or H'_{ε,δ}(x).
pub fn oscillation_majorant(
    sol: &SteinSolution,
    delta: f64,
    kind: MajorantKind,
    x: &[f64],
) -> Result<f64> {
    oscillation_majorant_with(sol, delta, kind, x, &MajorantSampler::new(sol.law.dim()))
}

pub fn oscillation_majorant_with(
    sol: &SteinSolution,
    delta: f64,
    kind: MajorantKind,
    x: &[f64],
    sampler: &MajorantSampler,
) -> Result<f64> {
    check_delta(delta)?;
    let n = sol.law.dim();
    check_dim(n, x.len())?;
    let order = if kind == MajorantKind::H { 2 } else { 3 };
    let r = majorant_radius_factor(n) * delta;
    let conv = GaussianRule::new(
        &SpdMatrix::scaled_identity(n, delta * delta)?,
        sampler.conv_nodes,
    );
    let mut total = 0.0;
    for (w, wz) in conv.nodes.chunks(n).zip(&conv.weights) {
        let y: Vec<f64> = x.iter().zip(w).map(|(a, b)| a + b).collect();
        total += wz * sampler.oscillation(sol, order, &y, r)?;
    }
    let mut v = 2.0 * total;
    if kind == MajorantKind::HPrime {
        v += sol.jet_upto(x, 3)?.third.norm();
    }
    Ok(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct MajorantAverage {
    pub kind: MajorantKind,
    pub delta: f64,
    pub value: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Right-hand sides of the Gaussian-average majorant bounds.
pub fn majorant_average_bound(law: &GaussianLaw, eps: f64, delta: f64, kind: MajorantKind) -> f64 {
    let n = law.dim() as f64;
    let le = eps.ln().abs();
    match kind {
        MajorantKind::H => 100.0 * n.powf(1.5) * law.covariance().inv_norm() * le * delta,
        MajorantKind::HPrime => {
            let is = law.covariance().inv_sqrt_norm();
            100.0 * n.powi(3) * is * is * (le + is * delta / eps)
        }
    }
}

/// ∫ H dN_Λ, computed as 2∫ osc_{Kδ}∇^k f_ε dN_{Λ+δ²Id} (plus ∫|∇³f_ε| dN_Λ
/// for H'), compared with its bound.
pub fn majorant_average(
    sol: &SteinSolution,
    delta: f64,
    kind: MajorantKind,
    outer_nodes: usize,
) -> Result<MajorantAverage> {
    majorant_average_with(
        sol,
        delta,
        kind,
        outer_nodes,
        &MajorantSampler::new(sol.law.dim()),
    )
}

pub fn majorant_average_with(
    sol: &SteinSolution,
    delta: f64,
    kind: MajorantKind,
    outer_nodes: usize,
    sampler: &MajorantSampler,
) -> Result<MajorantAverage> {
    check_delta(delta)?;
    if outer_nodes == 0 {
        return invalid("outer_nodes must be positive");
    }
    let n = sol.law.dim();
    let order = if kind == MajorantKind::H { 2 } else { 3 };
    let r = majorant_radius_factor(n) * delta;
    let wide = sol
        .law
        .covariance()
        .add(&SpdMatrix::scaled_identity(n, delta * delta)?)?;
    let outer = GaussianRule::new(&wide, outer_nodes);
    let nodes: Vec<&[f64]> = outer.nodes.chunks(n).collect();
    let oscs = nodes
        .par_iter()
        .map(|y| sampler.oscillation(sol, order, y, r))
        .collect::<Result<Vec<f64>>>()?;
    let mut value = 2.0
        * oscs
            .iter()
            .zip(&outer.weights)
            .map(|(o, w)| o * w)
            .sum::<f64>();
    if kind == MajorantKind::HPrime {
        let base = GaussianRule::new(sol.law.covariance(), outer_nodes);
        let bn: Vec<&[f64]> = base.nodes.chunks(n).collect();
        let norms = bn
            .par_iter()
            .map(|y| Ok(sol.jet_upto(y, 3)?.third.norm()))
            .collect::<Result<Vec<f64>>>()?;
        value += norms
            .iter()
            .zip(&base.weights)
            .map(|(a, w)| a * w)
            .sum::<f64>();
    }
    let bound = majorant_average_bound(&sol.law, sol.eps, delta, kind);
    Ok(MajorantAverage {
        kind,
        delta,
        value,
        bound,
        ratio: value / bound,
    })
}
