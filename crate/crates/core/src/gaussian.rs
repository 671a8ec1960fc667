//! Centered Gaussian densities, derivative tensors and pointwise bounds.

use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{ball_offsets, SpdMatrix, Tensor};

/// Number of sampled ball points used for oscillations (plus the center).
pub const OSC_SAMPLES: usize = 256;

/// Centered Gaussian law N_Λ.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    cov: SpdMatrix,
    log_norm: f64,
}

impl GaussianLaw {
    pub fn new(cov: SpdMatrix) -> Self {
        let n = cov.dim() as f64;
        let log_norm = -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * cov.log_det();
        Self { cov, log_norm }
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Ok(Self::new(SpdMatrix::identity(dim)?))
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// Density without the dimension check.
    pub fn density(&self, x: &[f64]) -> f64 {
        (self.log_norm - 0.5 * self.cov.inv_quad_form(x)).exp()
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.density(x))
    }
}

/// (2π)^{-N/2}(det Λ)^{-1/2} exp(-Λ^{-1}x·x/2).
pub fn gaussian_pdf(law: &GaussianLaw, x: &[f64]) -> Result<f64> {
    law.pdf(x)
}

/// Covariance of the convolution N_a * N_b = N_{a+b}.
pub fn gaussian_convolve(a: &SpdMatrix, b: &SpdMatrix) -> Result<SpdMatrix> {
    a.add(b)
}

/// Gradient −Λ^{-1}x N_Λ(x).
pub fn gaussian_gradient(law: &GaussianLaw, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(law.dim(), x.len())?;
    let p = law.density(x);
    Ok(law.cov.inv_mul_vec(x).into_iter().map(|a| -a * p).collect())
}

/// ∇²N_Λ(x) = (a⊗a − Λ^{-1})N_Λ(x) and
/// ∇³N_Λ(x) = (3 sym(Λ^{-1}⊗a) − a⊗a⊗a)N_Λ(x), with a = Λ^{-1}x.
pub fn gaussian_derivative_tensor(law: &GaussianLaw, x: &[f64], order: usize) -> Result<Tensor> {
    check_dim(law.dim(), x.len())?;
    let n = law.dim();
    let a = law.cov.inv_mul_vec(x);
    let p = law.density(x);
    let inv = law.cov.inverse();
    match order {
        2 => {
            let mut t = Tensor::zeros(n, 2);
            let d = t.data_mut();
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] = (a[i] * a[j] - inv[i * n + j]) * p;
                }
            }
            Ok(t)
        }
        3 => {
            let mut t = Tensor::zeros(n, 3);
            let d = t.data_mut();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let sym =
                            a[i] * inv[j * n + k] + a[j] * inv[i * n + k] + a[k] * inv[i * n + j];
                        d[(i * n + j) * n + k] = (sym - a[i] * a[j] * a[k]) * p;
                    }
                }
            }
            Ok(t)
        }
        _ => invalid(format!("unsupported derivative order {order}")),
    }
}

/// Ball sampling pattern for oscillations.
#[derive(Clone, Debug)]
pub struct BallSampler {
    dim: usize,
    offsets: Vec<f64>,
}

impl BallSampler {
    pub fn new(dim: usize) -> Self {
        Self::with_points(dim, OSC_SAMPLES)
    }

    pub fn with_points(dim: usize, m: usize) -> Self {
        Self {
            dim,
            offsets: ball_offsets(dim, m),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points including the center.
    pub fn len(&self) -> usize {
        self.offsets.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Points x + r·offset, flattened.
    pub fn points(&self, x: &[f64], r: f64) -> Vec<f64> {
        let n = self.dim;
        let mut out = Vec::with_capacity(self.offsets.len());
        for o in self.offsets.chunks(n) {
            for a in 0..n {
                out.push(x[a] + r * o[a]);
            }
        }
        out
    }

    /// Sampled osc_r f(x) = sup − inf over the ball; a lower bound of the true value.
    pub fn oscillation(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64], r: f64) -> f64 {
        let pts = self.points(x, r);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in pts.chunks(self.dim) {
            let v = f(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

/// Per-point ratios LHS/RHS of the three Gaussian bounds.
#[derive(Clone, Debug, Serialize)]
pub struct CertificateRow {
    pub point: Vec<f64>,
    pub second: f64,
    pub third: f64,
    pub oscillation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub tau: f64,
    /// Oscillation radius used, r = τ|Λ^{-1}|^{-1/2}/4 with δ = 1.
    pub radius: f64,
    pub rows: Vec<CertificateRow>,
    pub max_ratio: f64,
}

/// Evaluates the second-derivative, third-derivative and oscillation bounds
/// of N_Λ against N_{(1+τ)Λ} at each point.
pub fn gaussian_bound_certificates(
    law: &GaussianLaw,
    tau: f64,
    points: &[Vec<f64>],
) -> Result<CertificateReport> {
    if !(tau > 0.0 && tau <= 1.0) {
        return invalid(format!("tau = {tau} outside (0, 1]"));
    }
    let n = law.dim();
    let nf = n as f64;
    let wide = GaussianLaw::new(law.cov.scale(1.0 + tau)?);
    let inv = law.cov.inv_norm();
    let inv_sqrt = law.cov.inv_sqrt_norm();
    let c2 = 3.0 * (1.0 + tau).powf((nf + 2.0) / 2.0) / tau * inv;
    let c3 = 5.0 * (1.0 + tau).powf((nf + 3.0) / 2.0) * tau.powf(-1.5) * inv_sqrt.powi(3);
    let r = 0.25 * tau / inv.sqrt();
    let cosc = r * 20.0 / tau.sqrt() * (1.0 + tau).powf(nf / 2.0) * inv_sqrt;
    let ball = BallSampler::new(n);
    let dens = |y: &[f64]| law.density(y);
    let mut rows = Vec::with_capacity(points.len());
    let mut max_ratio: f64 = 0.0;
    for p in points {
        check_dim(n, p.len())?;
        let w = wide.density(p);
        let h2 = gaussian_derivative_tensor(law, p, 2)?.norm();
        let h3 = gaussian_derivative_tensor(law, p, 3)?.norm();
        let osc = ball.oscillation(&dens, p, r);
        let row = CertificateRow {
            point: p.clone(),
            second: h2 / (c2 * w),
            third: h3 / (c3 * w),
            oscillation: osc / (cosc * w),
        };
        max_ratio = max_ratio
            .max(row.second)
            .max(row.third)
            .max(row.oscillation);
        rows.push(row);
    }
    Ok(CertificateReport {
        tau,
        radius: r,
        rows,
        max_ratio,
    })
}
