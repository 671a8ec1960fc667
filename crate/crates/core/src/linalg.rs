//! Small dense symmetric matrices and derivative tensors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, invalid, Error, Result};
use crate::special::std_normal_quantile;

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Relative eigenvalue floor for positive definiteness.
pub const SPD_THRESHOLD: f64 = 1e-12;

/// Symmetric positive definite matrix with a cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    dim: usize,
    entries: Vec<f64>,
    eigvals: Vec<f64>,
    eigvecs: Vec<f64>,
    inverse: Vec<f64>,
}

impl SpdMatrix {
    /// Builds from row-major entries. The input must be exactly symmetric.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return invalid(format!("dimension {dim} outside 1..={MAX_DIM}"));
        }
        check_dim(dim * dim, entries.len())?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if entries[i * dim + j] != entries[j * dim + i] {
                    return Err(Error::NotSpd(format!("entry ({i},{j}) not symmetric")));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let eig = SymmetricEigen::new(m);
        let eigvals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let max_abs = eigvals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = eigvals.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > SPD_THRESHOLD * max_abs) || min <= 0.0 {
            return Err(Error::NotSpd(format!(
                "smallest eigenvalue {min:e} vs norm {max_abs:e}"
            )));
        }
        let mut eigvecs = vec![0.0; dim * dim];
        for i in 0..dim {
            for k in 0..dim {
                eigvecs[i * dim + k] = eig.eigenvectors[(i, k)];
            }
        }
        let mut s = Self {
            dim,
            entries,
            eigvals,
            eigvecs,
            inverse: Vec::new(),
        };
        s.inverse = s.spectral(|l| 1.0 / l);
        Ok(s)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = c;
        }
        Self::new(dim, e)
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut e = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            e[i * n + i] = *d;
        }
        Self::new(n, e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Eigenvalues (unordered).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    fn min_eig(&self) -> f64 {
        self.eigvals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn max_eig(&self) -> f64 {
        self.eigvals.iter().copied().fold(0.0, f64::max)
    }

    /// |Λ|, the operator norm.
    pub fn norm(&self) -> f64 {
        self.max_eig()
    }

    /// |Λ^{-1}|.
    pub fn inv_norm(&self) -> f64 {
        1.0 / self.min_eig()
    }

    /// |Λ^{1/2}|.
    pub fn sqrt_norm(&self) -> f64 {
        self.max_eig().sqrt()
    }

    /// |Λ^{-1/2}|.
    pub fn inv_sqrt_norm(&self) -> f64 {
        1.0 / self.min_eig().sqrt()
    }

    pub fn log_det(&self) -> f64 {
        self.eigvals.iter().map(|l| l.ln()).sum()
    }

    pub fn det(&self) -> f64 {
        self.eigvals.iter().product()
    }

    /// Row-major Λ^{-1}.
    pub fn inverse(&self) -> &[f64] {
        &self.inverse
    }

    /// Row-major g(Λ) for a scalar function g of the eigenvalues.
    pub fn spectral(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.dim;
        let gl: Vec<f64> = self.eigvals.iter().map(|&l| g(l)).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.eigvecs[i * n + k] * gl[k] * self.eigvecs[j * n + k];
                }
                out[i * n + j] = s;
            }
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }

    /// Row-major Λ^{1/2}.
    pub fn sqrt_matrix(&self) -> Vec<f64> {
        self.spectral(f64::sqrt)
    }

    /// Row-major Λ^{-1/2}.
    pub fn inv_sqrt_matrix(&self) -> Vec<f64> {
        self.spectral(|l| 1.0 / l.sqrt())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.entries, self.dim, x)
    }

    pub fn inv_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.inverse, self.dim, x)
    }

    /// x·Λ^{-1}x.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            let mut r = 0.0;
            for j in 0..n {
                r += self.inverse[i * n + j] * x[j];
            }
            s += x[i] * r;
        }
        s
    }

    /// u·Λu.
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += u[i] * self.entries[i * n + j] * u[j];
            }
        }
        s
    }

    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        check_dim(self.dim, other.dim)?;
        let e = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        SpdMatrix::new(self.dim, e)
    }

    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        SpdMatrix::new(self.dim, self.entries.iter().map(|a| a * c).collect())
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.entries == other.entries
    }
}

pub(crate) fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

/// Dense tensor of order 1, 2 or 3 over R^N, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            data: vec![0.0; dim.pow(order as u32)],
        }
    }

    pub fn from_data(dim: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(dim.pow(order as u32), data.len())?;
        Ok(Self { dim, order, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let mut p = 0;
        for &i in idx {
            p = p * self.dim + i;
        }
        self.data[p]
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_scaled(&mut self, other: &Tensor, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        let mut t = self.clone();
        t.add_scaled(other, -1.0);
        t
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// T(u, ..., u).
    pub fn contract(&self, u: &[f64]) -> f64 {
        let n = self.dim;
        match self.order {
            0 => self.data[0],
            1 => (0..n).map(|i| self.data[i] * u[i]).sum(),
            2 => {
                let mut s = 0.0;
                for i in 0..n {
                    let mut r = 0.0;
                    for j in 0..n {
                        r += self.data[i * n + j] * u[j];
                    }
                    s += u[i] * r;
                }
                s
            }
            _ => {
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let mut r = 0.0;
                        for k in 0..n {
                            r += self.data[(i * n + j) * n + k] * u[k];
                        }
                        s += u[i] * u[j] * r;
                    }
                }
                s
            }
        }
    }

    /// Operator norm: sup over unit vectors of |T(u,...,u)|, which for
    /// symmetric tensors equals the multilinear sup over independent unit
    /// vectors. Order 1 gives the Euclidean norm.
    pub fn norm(&self) -> f64 {
        let n = self.dim;
        match self.order {
            0 => self.data[0].abs(),
            1 => self.data.iter().map(|v| v * v).sum::<f64>().sqrt(),
            2 => {
                if n == 1 {
                    return self.data[0].abs();
                }
                let mut m = DMatrix::from_row_slice(n, n, &self.data);
                m = (&m + m.transpose()) * 0.5;
                let e = SymmetricEigen::new(m);
                e.eigenvalues.iter().fold(0.0, |a, v| a.max(v.abs()))
            }
            _ => {
                if n == 1 {
                    return self.data[0].abs();
                }
                sphere_max(n, |u| self.contract(u).abs())
            }
        }
    }
}

/// Maximizes a function over the unit sphere of R^n by dense sampling and a
/// pattern-search refinement of the best sample.
pub fn sphere_max(n: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let count = match n {
        2 => 256,
        3 => 1200,
        _ => 4000,
    };
    let dirs = unit_directions(n, count);
    let mut best = f64::NEG_INFINITY;
    let mut best_u = vec![0.0; n];
    for u in dirs.chunks(n) {
        let v = f(u);
        if v > best {
            best = v;
            best_u.copy_from_slice(u);
        }
    }
    let mut h = 0.05;
    let mut trial = vec![0.0; n];
    while h > 1e-9 {
        let mut improved = false;
        for k in 0..n {
            for sgn in [1.0, -1.0] {
                trial.copy_from_slice(&best_u);
                trial[k] += sgn * h;
                let nrm = trial.iter().map(|v| v * v).sum::<f64>().sqrt();
                trial.iter_mut().for_each(|v| *v /= nrm);
                let v = f(&trial);
                if v > best {
                    best = v;
                    best_u.copy_from_slice(&trial);
                    improved = true;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    best
}

/// Deterministic, roughly uniform unit vectors, flattened (count × n).
/// For n = 2 they cover the half circle, which suffices for even/odd forms.
pub fn unit_directions(n: usize, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * count);
    match n {
        1 => {
            out.push(1.0);
        }
        2 => {
            for k in 0..count {
                let th = std::f64::consts::PI * k as f64 / count as f64;
                out.push(th.cos());
                out.push(th.sin());
            }
        }
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            for k in 0..count {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * k as f64;
                out.push(r * th.cos());
                out.push(r * th.sin());
                out.push(z);
            }
        }
        _ => {
            for k in 0..count {
                let mut v: Vec<f64> = (0..n)
                    .map(|a| std_normal_quantile(halton(k as u64 + 1, PRIMES[a])))
                    .collect();
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= nrm);
                out.extend(v);
            }
        }
    }
    out
}

pub(crate) const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

/// Radical inverse of `i` in base `b`.
pub fn halton(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let bf = b as f64;
    while i > 0 {
        f /= bf;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Offsets in the closed unit ball used for oscillation sampling: the center
/// first, then `m` low-discrepancy points, half of them on the boundary in
/// antipodal pairs.
pub fn ball_offsets(n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if n == 1 {
        for k in 0..m {
            out.push(-1.0 + 2.0 * k as f64 / (m - 1) as f64);
        }
        return out;
    }
    let nb = m / 2;
    let half = nb / 2;
    let bdirs = match n {
        2 => {
            let mut v = Vec::with_capacity(2 * half);
            for k in 0..half {
                let th = std::f64::consts::PI * k as f64 / half as f64;
                v.push(th.cos());
                v.push(th.sin());
            }
            v
        }
        _ => unit_directions(n, half),
    };
    for u in bdirs.chunks(n) {
        out.extend_from_slice(u);
        out.extend(u.iter().map(|x| -x));
    }
    let ni = m - 2 * half;
    for k in 0..ni {
        let idx = k as u64 + 1;
        let rad = halton(idx, PRIMES[0]).powf(1.0 / n as f64);
        let dir: Vec<f64> = if n == 2 {
            let th = 2.0 * std::f64::consts::PI * halton(idx, PRIMES[1]);
            vec![th.cos(), th.sin()]
        } else {
            let mut v: Vec<f64> = (0..n)
                .map(|a| std_normal_quantile(halton(idx, PRIMES[a + 1])))
                .collect();
            let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            v
        };
        out.extend(dir.iter().map(|x| x * rad));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_rejects_zero_and_asymmetric() {
        assert!(SpdMatrix::new(1, vec![0.0]).is_err());
        assert!(SpdMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        assert!(SpdMatrix::new(2, vec![1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(SpdMatrix::new(9, vec![0.0; 81]).is_err());
    }

    #[test]
    fn norms_of_diagonal() {
        let a = SpdMatrix::diagonal(&[4.0, 0.25]).unwrap();
        assert!((a.norm() - 4.0).abs() < 1e-14);
        assert!((a.inv_norm() - 4.0).abs() < 1e-12);
        assert!((a.inv_sqrt_norm() - 2.0).abs() < 1e-12);
        assert!((a.sqrt_norm() - 2.0).abs() < 1e-14);
        assert!((a.det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_and_sqrt() {
        let a = SpdMatrix::new(2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let inv = a.inverse();
        assert!((inv[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((inv[1] + 1.0 / 3.0).abs() < 1e-14);
        let s = a.sqrt_matrix();
        let s2: Vec<f64> = (0..4)
            .map(|p| {
                let (i, j) = (p / 2, p % 2);
                (0..2).map(|k| s[i * 2 + k] * s[k * 2 + j]).sum()
            })
            .collect();
        for (x, y) in s2.iter().zip(a.entries()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn tensor_norm_matches_eigen_and_cubic() {
        let t = Tensor::from_data(2, 2, vec![1.0, 2.0, 2.0, -3.0]).unwrap();
        let expect = (1.0f64 - 3.0).abs() / 2.0 + ((1.0f64 + 3.0).powi(2) / 4.0 + 4.0).sqrt();
        assert!((t.norm() - expect).abs() < 1e-12);
        // u1^3 has norm 1 at e1
        let mut d = vec![0.0; 8];
        d[0] = 1.0;
        let t3 = Tensor::from_data(2, 3, d).unwrap();
        assert!((t3.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_offsets_shape() {
        for n in 1..=3 {
            let b = ball_offsets(n, 256);
            assert_eq!(b.len(), 257 * n);
            for p in b.chunks(n) {
                let r: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(r <= 1.0 + 1e-12);
            }
        }
    }
}
