//! Multilevel local dependence structures on the lattice torus, dependency
//! indicators, the lift map, aggregates and the explicit error-bound
//! calculator.
//!
//! Logarithms of L are base 2. Levels run over 0..=1+⌊log₂L⌋.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::SpdMatrix;

/// Largest supported side length.
pub const MAX_SIDE: usize = 1 << 20;

/// (m, y) with y ∈ 2^m Z^d ∩ [0, L)^d.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LevelIndex {
    pub m: usize,
    pub y: Vec<usize>,
}

impl LevelIndex {
    pub fn new(m: usize, y: Vec<usize>) -> Self {
        Self { m, y }
    }
}

/// Abstract dependency structure over a finite index set 0..len.
pub trait DependenceGeometry: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn level_of(&self, i: usize) -> usize;
    fn chi_pos(&self, i: usize, j: usize) -> bool;
    fn chi3_pos(&self, i: usize, j: usize, k: usize) -> bool;
    /// Position of the level-n index that j is reassigned to.
    fn lift_pos(&self, j: usize, n: usize) -> Option<usize>;
    /// Per-level counts used by the bound calculator.
    fn level_terms(&self) -> Vec<LevelTerm>;
}

/// Number of indices on a level and the number of ordered same-level pairs
/// with χ = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelTerm {
    pub level: usize,
    pub n_indices: f64,
    pub same_level_pairs: f64,
}

/// Geometry with a single index at level 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct SingleIndex;

impl DependenceGeometry for SingleIndex {
    fn len(&self) -> usize {
        1
    }
    fn level_of(&self, _: usize) -> usize {
        0
    }
    fn chi_pos(&self, _: usize, _: usize) -> bool {
        true
    }
    fn chi3_pos(&self, _: usize, _: usize, _: usize) -> bool {
        true
    }
    fn lift_pos(&self, _: usize, _: usize) -> Option<usize> {
        None
    }
    fn level_terms(&self) -> Vec<LevelTerm> {
        vec![LevelTerm {
            level: 0,
            n_indices: 1.0,
            same_level_pairs: 1.0,
        }]
    }
}

/// Parameters (d, L, K, γ, B) with the derived index set.
#[derive(Clone, Debug, Serialize)]
pub struct DependenceStructure {
    pub d: usize,
    pub side: usize,
    pub k: f64,
    pub gamma: f64,
    pub b: f64,
    pub periodic: bool,
    max_level: usize,
    per_axis: Vec<usize>,
    offsets: Vec<usize>,
}

impl DependenceStructure {
    pub fn new(d: usize, side: usize, k: f64, gamma: f64, b: f64, periodic: bool) -> Result<Self> {
        if d == 0 || d > 3 {
            return invalid("d must be in 1..=3");
        }
        if side < 2 {
            return invalid("L must be ≥ 2");
        }
        if side > MAX_SIDE {
            return Err(Error::TooLarge(format!("L = {side} exceeds 2^20")));
        }
        if !(k >= 2.0) {
            return invalid("K must be ≥ 2");
        }
        if !(gamma > 0.0 && gamma <= 2.0) {
            return invalid("gamma must be in (0, 2]");
        }
        if !(b >= 1.0) {
            return invalid("B must be ≥ 1");
        }
        let max_level = 1 + floor_log2(side);
        let per_axis: Vec<usize> = (0..=max_level).map(|m| side.div_ceil(1 << m)).collect();
        let mut offsets = Vec::with_capacity(max_level + 2);
        let mut acc = 0usize;
        for &c in &per_axis {
            offsets.push(acc);
            let cnt = c
                .checked_pow(d as u32)
                .ok_or_else(|| Error::TooLarge("index set overflows".into()))?;
            acc = acc
                .checked_add(cnt)
                .ok_or_else(|| Error::TooLarge("index set overflows".into()))?;
        }
        offsets.push(acc);
        Ok(Self {
            d,
            side,
            k,
            gamma,
            b,
            periodic,
            max_level,
            per_axis,
            offsets,
        })
    }

    /// Periodic structure with γ = 1, B = 1.
    pub fn periodic(d: usize, side: usize, k: f64) -> Result<Self> {
        Self::new(d, side, k, 1.0, 1.0, true)
    }

    pub fn log_l(&self) -> f64 {
        (self.side as f64).log2()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn level_count(&self, m: usize) -> usize {
        self.offsets[m + 1] - self.offsets[m]
    }

    pub fn per_axis(&self, m: usize) -> usize {
        self.per_axis[m]
    }

    pub fn level_offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    /// K·log₂L·2^m.
    pub fn half_width(&self, m: usize) -> f64 {
        self.k * self.log_l() * (1u64 << m) as f64
    }

    /// Lattice cells (coordinates in [0, L)) covered by the support box of
    /// level m at y, each counted once.
    pub fn box_cells_1d(&self, m: usize, y: usize) -> Vec<usize> {
        let h = self.half_width(m).floor() as i64;
        let l = self.side as i64;
        if 2 * h + 1 >= l {
            return (0..self.side).collect();
        }
        (-h..=h)
            .map(|o| (y as i64 + o).rem_euclid(l) as usize)
            .collect()
    }

    pub fn position(&self, idx: &LevelIndex) -> Result<usize> {
        if idx.m > self.max_level {
            return invalid(format!("level {} above {}", idx.m, self.max_level));
        }
        check_dim(self.d, idx.y.len())?;
        let step = 1usize << idx.m;
        let c = self.per_axis[idx.m];
        let mut p = 0;
        for &ya in &idx.y {
            if ya >= self.side || ya % step != 0 {
                return invalid(format!("invalid coordinate {ya} at level {}", idx.m));
            }
            p = p * c + ya / step;
        }
        Ok(self.offsets[idx.m] + p)
    }

    pub fn index_at(&self, pos: usize) -> LevelIndex {
        let m = self.level_of(pos);
        let c = self.per_axis[m];
        let mut rest = pos - self.offsets[m];
        let mut y = vec![0; self.d];
        for a in (0..self.d).rev() {
            y[a] = (rest % c) << m;
            rest /= c;
        }
        LevelIndex { m, y }
    }

    fn coord(&self, pos: usize, a: usize) -> (usize, usize) {
        let m = self.level_of(pos);
        let c = self.per_axis[m];
        let mut rest = pos - self.offsets[m];
        for _ in 0..(self.d - 1 - a) {
            rest /= c;
        }
        (m, (rest % c) << m)
    }

    fn axis_gap(&self, ya: usize, ma: usize, yb: usize, mb: usize) -> f64 {
        let mut delta = ya.abs_diff(yb);
        if self.periodic {
            delta = delta.min(self.side - delta);
        }
        (delta as f64 - self.half_width(ma) - self.half_width(mb)).max(0.0)
    }

    /// dist∞ (periodic if flagged) between the support boxes.
    fn box_distance(&self, i: usize, j: usize) -> f64 {
        let mut g: f64 = 0.0;
        for a in 0..self.d {
            let (mi, yi) = self.coord(i, a);
            let (mj, yj) = self.coord(j, a);
            g = g.max(self.axis_gap(yi, mi, yj, mj));
        }
        g
    }

    fn threshold(&self, m: usize) -> f64 {
        2.0 * (1u64 << m) as f64 * self.k * self.log_l()
    }

    pub fn chi(&self, i: &LevelIndex, j: &LevelIndex) -> Result<bool> {
        Ok(self.chi_pos(self.position(i)?, self.position(j)?))
    }

    pub fn chi3(&self, i: &LevelIndex, j: &LevelIndex, k: &LevelIndex) -> Result<bool> {
        Ok(self.chi3_pos(self.position(i)?, self.position(j)?, self.position(k)?))
    }

    /// (n, 2^n⌊y_j/2^n⌋).
    pub fn lift(&self, j: &LevelIndex, n: usize) -> Result<LevelIndex> {
        self.position(j)?;
        if n <= j.m {
            return invalid(format!("lift level {n} must exceed {}", j.m));
        }
        if n > self.max_level {
            return invalid(format!("lift level {n} above {}", self.max_level));
        }
        Ok(LevelIndex {
            m: n,
            y: j.y.iter().map(|v| (v >> n) << n).collect(),
        })
    }

    /// Interval [y − h, y + h] on one axis, unwrapped.
    pub fn support_interval(&self, m: usize, y: usize) -> (f64, f64) {
        let h = self.half_width(m);
        (y as f64 - h, y as f64 + h)
    }

    /// Same-level neighbours of position i with χ = 1.
    pub fn same_level_neighbors(&self, i: usize) -> Vec<usize> {
        let m = self.level_of(i);
        (self.offsets[m]..self.offsets[m + 1])
            .filter(|&j| self.chi_pos(i, j))
            .collect()
    }
}

fn floor_log2(x: usize) -> usize {
    (usize::BITS - 1 - x.leading_zeros()) as usize
}

impl DependenceGeometry for DependenceStructure {
    fn len(&self) -> usize {
        self.offsets[self.max_level + 1]
    }

    fn level_of(&self, i: usize) -> usize {
        match self.offsets.binary_search(&i) {
            Ok(m) => m.min(self.max_level),
            Err(m) => m - 1,
        }
    }

    fn chi_pos(&self, i: usize, j: usize) -> bool {
        let m = self.level_of(i).max(self.level_of(j));
        self.box_distance(i, j) <= self.threshold(m)
    }

    fn chi3_pos(&self, i: usize, j: usize, k: usize) -> bool {
        let m = self.level_of(i).max(self.level_of(j)).max(self.level_of(k));
        let t = self.threshold(m);
        self.box_distance(i, k) <= t || self.box_distance(j, k) <= t
    }

    fn lift_pos(&self, j: usize, n: usize) -> Option<usize> {
        let idx = self.index_at(j);
        self.lift(&idx, n).ok().and_then(|l| self.position(&l).ok())
    }

    fn level_terms(&self) -> Vec<LevelTerm> {
        (0..=self.max_level)
            .map(|m| {
                let step = 1usize << m;
                let c = self.per_axis[m];
                let t = self.threshold(m);
                let mut axis_pairs = 0usize;
                for a in 0..c {
                    for b in 0..c {
                        if self.axis_gap(a * step, m, b * step, m) <= t {
                            axis_pairs += 1;
                        }
                    }
                }
                LevelTerm {
                    level: m,
                    n_indices: (c as f64).powi(self.d as i32),
                    same_level_pairs: (axis_pairs as f64).powi(self.d as i32),
                }
            })
            .collect()
    }
}

/// Complete enumeration, level-major and lexicographic in y.
pub fn build_index_set(structure: &DependenceStructure) -> Vec<LevelIndex> {
    (0..structure.len())
        .map(|p| structure.index_at(p))
        .collect()
}

/// One realization: values of every X_i (rows of length N) in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilevelSample {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl MultilevelSample {
    pub fn new(n_indices: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_dim(n_indices * dim, values.len())?;
        Ok(Self { dim, values })
    }

    pub fn zeros(n_indices: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; n_indices * dim],
        }
    }

    pub fn n_indices(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// X = Σ_i X_i.
    pub fn total(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.dim];
        for row in self.values.chunks(self.dim) {
            for a in 0..self.dim {
                t[a] += row[a];
            }
        }
        t
    }

    /// Per-level sums.
    pub fn level_totals(&self, geom: &dyn DependenceGeometry, levels: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; levels];
        for i in 0..self.n_indices() {
            let m = geom.level_of(i);
            for a in 0..self.dim {
                out[m][a] += self.value(i)[a];
            }
        }
        out
    }
}

/// Dense E[X_i ⊗ X_j] table.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossMoments {
    n_indices: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Largest index set for dense pair tables.
pub const MAX_DENSE_INDICES: usize = 4096;

impl CrossMoments {
    pub fn zeros(n_indices: usize, dim: usize) -> Result<Self> {
        if n_indices > MAX_DENSE_INDICES {
            return Err(Error::TooLarge(format!(
                "{n_indices} indices for a dense table"
            )));
        }
        Ok(Self {
            n_indices,
            dim,
            data: vec![0.0; n_indices * n_indices * dim * dim],
        })
    }

    /// Sample average of X_i ⊗ X_j.
    pub fn estimate(samples: &[MultilevelSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
        let (ni, n) = (first.n_indices(), first.dim);
        let mut out = Self::zeros(ni, n)?;
        for s in samples {
            check_dim(ni * n, s.values.len())?;
            for i in 0..ni {
                for j in 0..ni {
                    let base = (i * ni + j) * n * n;
                    for a in 0..n {
                        for b in 0..n {
                            out.data[base + a * n + b] += s.value(i)[a] * s.value(j)[b];
                        }
                    }
                }
            }
        }
        let inv = 1.0 / samples.len() as f64;
        out.data.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let n2 = self.dim * self.dim;
        let base = (i * self.n_indices + j) * n2;
        &self.data[base..base + n2]
    }

    pub fn set(&mut self, i: usize, j: usize, v: &[f64]) {
        let n2 = self.dim * self.dim;
        let base = (i * self.n_indices + j) * n2;
        self.data[base..base + n2].copy_from_slice(v);
    }

    pub fn n_indices(&self) -> usize {
        self.n_indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Λ = Σ_{ij} χ_ij E[X_i ⊗ X_j] (row-major N×N).
pub fn lambda_from_moments(
    geom: &dyn DependenceGeometry,
    moments: &CrossMoments,
) -> Result<Vec<f64>> {
    check_dim(geom.len(), moments.n_indices)?;
    let n = moments.dim;
    let mut out = vec![0.0; n * n];
    for i in 0..geom.len() {
        for j in 0..geom.len() {
            if geom.chi_pos(i, j) {
                for (o, v) in out.iter_mut().zip(moments.get(i, j)) {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}

/// Z_i, Z_ij, Y_il and W_ij for one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub z_i: Vec<f64>,
    pub z_ij: Vec<f64>,
    pub y_il: Vec<f64>,
    pub w_ij: Vec<f64>,
}

fn outer_minus(a: &[f64], b: &[f64], e: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n * n];
    for p in 0..n {
        for q in 0..n {
            out[p * n + q] = a[p] * b[q] - e[p * n + q];
        }
    }
    out
}

/// The four abbreviations for the pair (i, j); j plays the role of l in Y.
pub fn aggregates(
    geom: &dyn DependenceGeometry,
    sample: &MultilevelSample,
    moments: &CrossMoments,
    i: usize,
    j: usize,
) -> Result<Aggregates> {
    let len = geom.len();
    check_dim(len, sample.n_indices())?;
    check_dim(len, moments.n_indices)?;
    check_dim(sample.dim, moments.dim)?;
    if i >= len || j >= len {
        return invalid("index out of range");
    }
    let n = sample.dim;
    let mut z_i = vec![0.0; n];
    let mut z_ij = vec![0.0; n];
    let mut y_il = vec![0.0; n * n];
    let mi = geom.level_of(i);
    for k in 0..len {
        let xk = sample.value(k);
        if geom.chi_pos(i, k) {
            for a in 0..n {
                z_i[a] += xk[a];
            }
        }
        if geom.chi3_pos(i, j, k) {
            for a in 0..n {
                z_ij[a] += xk[a];
            }
        }
        if geom.level_of(k) < mi && geom.chi_pos(i, k) && geom.lift_pos(k, mi) == Some(j) {
            let w = outer_minus(sample.value(i), xk, moments.get(i, k));
            for (o, v) in y_il.iter_mut().zip(w) {
                *o += v;
            }
        }
    }
    let w_ij = outer_minus(sample.value(i), sample.value(j), moments.get(i, j));
    Ok(Aggregates {
        z_i,
        z_ij,
        y_il,
        w_ij,
    })
}

/// Named constants, all 1 unless overridden.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyTable {
    values: BTreeMap<String, f64>,
}

pub const POLICY_KEYS: [&str; 10] = [
    "C_bar",
    "C_eps",
    "C_ell",
    "C_cond",
    "C_bound",
    "C_tail",
    "c_tail",
    "C_gamma",
    "S",
    "C_variance",
];

impl Default for PolicyTable {
    fn default() -> Self {
        let values = POLICY_KEYS.iter().map(|k| (k.to_string(), 1.0)).collect();
        Self { values }
    }
}

impl PolicyTable {
    pub fn get(&self, key: &str) -> f64 {
        self.values.get(key).copied().unwrap_or(1.0)
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::Config(format!("unknown policy key {key}")));
        }
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Config(format!("policy {key} must be positive")));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    /// Applies a `KEY=VAL` override.
    pub fn apply(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VAL, got {kv}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad policy value in {kv}")))?;
        self.set(k.trim(), v)
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.values
    }
}

/// Bar values for one level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelBars {
    pub x: f64,
    pub w: f64,
    pub z_i: f64,
    pub z_ij: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BarConstants {
    pub s: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub levels: Vec<LevelBars>,
}

impl BarConstants {
    /// All bars equal to `v` on every level.
    pub fn uniform(levels: usize, v: f64) -> Self {
        Self {
            s: 1.0,
            gamma1: 0.5,
            gamma2: 1.0 / 3.0,
            levels: vec![
                LevelBars {
                    x: v,
                    w: v,
                    z_i: v,
                    z_ij: v,
                    y: v,
                };
                levels
            ],
        }
    }

    /// Multiplies every Z̄ (both kinds) by t.
    pub fn scale_z(&self, t: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.levels {
            l.z_i *= t;
            l.z_ij *= t;
        }
        out
    }
}

/// γ₁ = γ/(γ+1), γ₂ = γ/(γ+2).
pub fn gamma_exponents(gamma: f64) -> (f64, f64) {
    (gamma / (gamma + 1.0), gamma / (gamma + 2.0))
}

pub fn bar_constants(
    structure: &DependenceStructure,
    s: f64,
    policy: &PolicyTable,
) -> Result<BarConstants> {
    if !(s >= 1.0) {
        return invalid("S must be ≥ 1");
    }
    let (g1, g2) = gamma_exponents(structure.gamma);
    let c = policy.get("C_bar");
    let d = structure.d as f64;
    let ll = structure.log_l();
    let lf = structure.side as f64;
    let b = structure.b;
    let sl = s * ll;
    let kl = structure.k * ll;
    let levels = (0..=structure.max_level())
        .map(|m| {
            let lev = ((1u64 << m) as f64).powf(d / 2.0);
            LevelBars {
                x: c * b * sl.powf(1.0 / structure.gamma) * lf.powf(-d),
                w: c * b * b * sl.powf(2.0 / structure.gamma) * lf.powf(-2.0 * d),
                z_i: c * b * sl.powf(1.0 / g1) * kl.powf(d + 1.0) * lev * lf.powf(-d),
                z_ij: c * b * sl.powf(1.0 / g1) * kl.powf(d + 1.0) * lev * lf.powf(-d),
                y: c * b * b * sl.powf(1.0 / g2) * kl.powf(d) * lev * lf.powf(-2.0 * d),
            }
        })
        .collect();
    Ok(BarConstants {
        s,
        gamma1: g1,
        gamma2: g2,
        levels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsEll {
    pub eps: f64,
    pub eps_raw: f64,
    pub eps_clamped: bool,
    pub ell: usize,
    pub ell_raw: usize,
    pub ell_clamped: bool,
}

/// ε and ℓ from the closed-form choices; ε is clamped to (0, ½] and ℓ to
/// the top level.
pub fn choose_eps_ell(
    structure: &DependenceStructure,
    lambda: &SpdMatrix,
    s: f64,
    policy: &PolicyTable,
) -> Result<EpsEll> {
    if !(s >= 1.0) {
        return invalid("S must be ≥ 1");
    }
    let (g1, g2) = gamma_exponents(structure.gamma);
    let d = structure.d as f64;
    let ll = structure.log_l();
    let lf = structure.side as f64;
    let b = structure.b;
    let k = structure.k;
    let is3 = lambda.inv_sqrt_norm().powi(3);
    let eps_raw = policy.get("C_eps")
        * b.powi(3)
        * s.powf(1.0 / g2 + 1.0 / g1)
        * k.powf(3.0 * d + 2.0)
        * ll.powf(1.0 + 3.0 * d + 1.0 + 1.0 / g2 + 1.0 / g1)
        * is3
        * lf.powf(-2.0 * d);
    let eps_clamped = eps_raw > 0.5;
    let eps = eps_raw.min(0.5);
    let inner = (b.powi(3) * is3 * lf.powf(-2.0 * d)).ln().abs();
    let rhs = policy.get("C_ell")
        * b
        * b
        * s.powf(1.0 / g2)
        * k.powf(2.0 * d)
        * lambda.inv_norm()
        * inner
        * ll.powf(2.0 * d + 1.0 / g2)
        * lf.powf(-d);
    let mut ell_raw = 0usize;
    while ((1u64 << ell_raw.min(62)) as f64).powf(d / 2.0) < rhs && ell_raw < 62 {
        ell_raw += 1;
    }
    let ell_clamped = ell_raw > structure.max_level();
    Ok(EpsEll {
        eps,
        eps_raw,
        eps_clamped,
        ell: ell_raw.min(structure.max_level()),
        ell_raw,
        ell_clamped,
    })
}

/// How R_tail is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum TailEstimate {
    /// Bar-product surrogate times the tail factor 2·L^{−c·S/2}.
    Surrogate { side: f64 },
    /// Precomputed expectation sum (from [`r_tail_sum_from_samples`]).
    Sampled(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremBound {
    pub eps: f64,
    pub ell: usize,
    pub eps_term: f64,
    pub condition_lhs: f64,
    pub condition_rhs: f64,
    pub condition_satisfied: bool,
    pub r_lowlevel: f64,
    pub r_alllevel: f64,
    pub r_tail: f64,
    pub total: f64,
}

/// Condition LHS, remainder terms and total of the normal-approximation
/// estimate, from per-level counts and bars.
pub fn theorem_bound_terms(
    terms: &[LevelTerm],
    lambda: &SpdMatrix,
    bars: &BarConstants,
    eps: f64,
    ell: usize,
    policy: &PolicyTable,
    tail: &TailEstimate,
) -> Result<TheoremBound> {
    if !(eps > 0.0 && eps <= 0.5) {
        return invalid(format!("eps = {eps} outside (0, ½]"));
    }
    let n = lambda.dim() as f64;
    let is = lambda.inv_sqrt_norm();
    let inv = lambda.inv_norm();
    let le = eps.ln().abs();
    let mut cond_low = 0.0;
    let mut cond_high = 0.0;
    let mut low = 0.0;
    let mut all = 0.0;
    let mut tail_bars = 0.0;
    for t in terms {
        let b = bars
            .levels
            .get(t.level)
            .ok_or_else(|| Error::InvalidArgument(format!("no bars for level {}", t.level)))?;
        let pairs = t.same_level_pairs;
        let idx = t.n_indices;
        let first = pairs * (b.w * b.z_ij + 2.0 * b.y * b.z_ij) + idx * b.x * b.z_i * b.z_i;
        all += first;
        tail_bars += first;
        if t.level <= ell {
            cond_low += first;
            low += pairs * (b.w * b.z_ij * b.z_ij + 2.0 * b.y * b.z_ij * b.z_ij)
                + idx * b.x * b.z_i.powi(3);
        } else {
            cond_high += pairs * (b.w + 2.0 * b.y) + idx * b.x * b.z_i;
        }
    }
    let condition_lhs =
        n.powf(4.5) * is.powi(3) / eps * cond_low + n.powi(4) * inv * le * cond_high;
    let condition_rhs = 1.0 / policy.get("C_cond");
    let c = policy.get("C_bound");
    let r_lowlevel = c * n.powf(4.5) * is.powi(3) / eps * low;
    let r_alllevel = c * n.powf(4.5) * is * is * le * all;
    let pre = policy.get("C_tail") * inv * n.powf(1.5) * eps.powf(-n);
    let r_tail = match tail {
        TailEstimate::Surrogate { side } => {
            let f = 2.0 * side.powf(-policy.get("c_tail") * bars.s / 2.0);
            pre * tail_bars * f
        }
        TailEstimate::Sampled(v) => pre * v,
    };
    let eps_term = c * n.sqrt() * lambda.sqrt_norm() * eps;
    let total = eps_term + r_lowlevel + r_alllevel + r_tail;
    Ok(TheoremBound {
        eps,
        ell,
        eps_term,
        condition_lhs,
        condition_rhs,
        condition_satisfied: condition_lhs <= condition_rhs,
        r_lowlevel,
        r_alllevel,
        r_tail,
        total,
    })
}

pub fn theorem_bound(
    structure: &DependenceStructure,
    lambda: &SpdMatrix,
    bars: &BarConstants,
    eps: f64,
    ell: usize,
    policy: &PolicyTable,
) -> Result<TheoremBound> {
    theorem_bound_terms(
        &structure.level_terms(),
        lambda,
        bars,
        eps,
        ell,
        policy,
        &TailEstimate::Surrogate {
            side: structure.side as f64,
        },
    )
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sample average of the expectation sum inside R_tail (Frobenius norms for
/// matrix-valued terms). Quadratic-to-cubic in the index count.
pub fn r_tail_sum_from_samples(
    geom: &dyn DependenceGeometry,
    samples: &[MultilevelSample],
    moments: &CrossMoments,
    bars: &BarConstants,
) -> Result<f64> {
    if samples.is_empty() {
        return invalid("no samples");
    }
    let len = geom.len();
    if len > 512 {
        return Err(Error::TooLarge(
            "sampled R_tail limited to 512 indices".into(),
        ));
    }
    let mut total = 0.0;
    for s in samples {
        let mut acc = 0.0;
        for i in 0..len {
            let mi = geom.level_of(i);
            let b = &bars.levels[mi];
            for j in 0..len {
                if geom.level_of(j) != mi || !geom.chi_pos(i, j) {
                    continue;
                }
                let ag = aggregates(geom, s, moments, i, j)?;
                let (w, z, y) = (norm(&ag.w_ij), norm(&ag.z_ij), norm(&ag.y_il));
                let ind = |v: f64, bar: f64| if v > bar { 1.0 } else { 0.0 };
                acc += w * z * (ind(z, b.z_ij) + ind(w, b.w));
                acc += y * z * (ind(z, b.z_ij) + ind(y, b.y));
            }
            let ag = aggregates(geom, s, moments, i, i)?;
            let x = norm(s.value(i));
            let zi = norm(&ag.z_i);
            acc += x
                * zi
                * zi
                * (if zi > b.z_i { 1.0 } else { 0.0 } + if x > b.x { 1.0 } else { 0.0 });
        }
        total += acc;
    }
    Ok(total / samples.len() as f64)
}

/// C(d,γ,K)·B·(log₂L)^{d/2}·L^{-d/2} with C = C_γ·4^d·K^{d/2}/(1 − 2^{−d/2}).
pub fn variance_norm_bound(structure: &DependenceStructure, policy: &PolicyTable) -> f64 {
    let d = structure.d as f64;
    let c =
        policy.get("C_gamma") * policy.get("C_variance") * 4f64.powf(d) * structure.k.powf(d / 2.0)
            / (1.0 - 2f64.powf(-d / 2.0));
    c * structure.b * structure.log_l().powf(d / 2.0) * (structure.side as f64).powf(-d / 2.0)
}

/// Serializable bound report.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub d: usize,
    pub side: usize,
    pub k: f64,
    pub gamma: f64,
    pub b: f64,
    pub n: usize,
    pub log_base: u32,
    pub level_cap: String,
    pub grouping_cap: String,
    pub policy: BTreeMap<String, f64>,
    pub lambda: Vec<f64>,
    pub choice: EpsEll,
    pub bound: TheoremBound,
    pub variance_norm_bound: f64,
}

pub fn bound_report(
    structure: &DependenceStructure,
    lambda: &SpdMatrix,
    policy: &PolicyTable,
) -> Result<BoundReport> {
    let s = policy.get("S");
    let bars = bar_constants(structure, s, policy)?;
    let choice = choose_eps_ell(structure, lambda, s, policy)?;
    let bound = theorem_bound(structure, lambda, &bars, choice.eps, choice.ell, policy)?;
    Ok(BoundReport {
        d: structure.d,
        side: structure.side,
        k: structure.k,
        gamma: structure.gamma,
        b: structure.b,
        n: lambda.dim(),
        log_base: 2,
        level_cap: "1+floor(log2 L)".into(),
        grouping_cap: "log2 L".into(),
        policy: policy.entries().clone(),
        lambda: lambda.entries().to_vec(),
        choice,
        bound,
        variance_norm_bound: variance_norm_bound(structure, policy),
    })
}
