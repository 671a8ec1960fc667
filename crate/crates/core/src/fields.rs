//! Lattice noise, finite-range random fields, local averages, the
//! partition-of-unity multilevel decomposition, a synthetic multilevel
//! generator, brute-force law oracles and the Monte Carlo driver.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::distance::{DiscreteLaw, SampleSet};
use crate::error::{check_dim, invalid, Error, Result};
use crate::multilevel::{DependenceGeometry, DependenceStructure, MultilevelSample};
use crate::rng::{self, Rng};

/// Largest enumerable noise configuration count, 2^20.
pub const MAX_BRUTE_FORCE_CELLS: usize = 20;

/// Sample size used when a centering constant has no closed form.
pub const CENTERING_SAMPLES: usize = 1 << 18;

/// Single-site noise law, centered with unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDist {
    Rademacher,
    /// Uniform on [−√3, √3].
    Uniform,
    /// Exp(1) − 1.
    CenteredExponential,
    /// Laplace with unit variance.
    Laplace,
    Gaussian,
}

impl NoiseDist {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            NoiseDist::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseDist::Uniform => 3f64.sqrt() * (2.0 * rng.gen::<f64>() - 1.0),
            NoiseDist::CenteredExponential => {
                let e: f64 = Exp1.sample(rng);
                e - 1.0
            }
            NoiseDist::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                s * e / std::f64::consts::SQRT_2
            }
            NoiseDist::Gaussian => StandardNormal.sample(rng),
        }
    }

    /// Third cumulant.
    pub fn third_cumulant(&self) -> f64 {
        match self {
            NoiseDist::CenteredExponential => 2.0,
            _ => 0.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self, NoiseDist::CenteredExponential)
    }

    /// Tail exponent γ of the single-site law.
    pub fn tail_exponent(&self) -> f64 {
        match self {
            NoiseDist::CenteredExponential | NoiseDist::Laplace => 1.0,
            _ => 2.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseDist::Rademacher => "rademacher",
            NoiseDist::Uniform => "uniform",
            NoiseDist::CenteredExponential => "centered-exponential",
            NoiseDist::Laplace => "laplace",
            NoiseDist::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for NoiseDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rademacher" => NoiseDist::Rademacher,
            "uniform" => NoiseDist::Uniform,
            "centered-exponential" | "exponential" => NoiseDist::CenteredExponential,
            "laplace" => NoiseDist::Laplace,
            "gaussian" => NoiseDist::Gaussian,
            _ => return invalid(format!("unknown noise distribution '{s}'")),
        })
    }
}

/// Periodic lattice geometry [0, L)^d with lexicographic cell order,
/// axis 0 most significant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub d: usize,
    pub side: usize,
}

impl Geometry {
    pub fn new(d: usize, side: usize) -> Result<Self> {
        if d == 0 || d > 3 || side == 0 {
            return invalid(format!("invalid geometry d = {d}, L = {side}"));
        }
        side.checked_pow(d as u32)
            .filter(|&n| n <= 1 << 26)
            .ok_or_else(|| Error::TooLarge(format!("L^d with L = {side}, d = {d}")))?;
        Ok(Self { d, side })
    }

    pub fn cells(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    pub fn coords(&self, mut c: usize) -> Vec<usize> {
        let mut x = vec![0; self.d];
        for a in (0..self.d).rev() {
            x[a] = c % self.side;
            c /= self.side;
        }
        x
    }

    pub fn cell(&self, x: &[usize]) -> usize {
        x.iter().fold(0, |acc, &v| acc * self.side + v % self.side)
    }

    /// Stride of axis a in the flat layout.
    fn stride(&self, a: usize) -> usize {
        self.side.pow((self.d - 1 - a) as u32)
    }

    /// Periodic sup-distance between two cells.
    pub fn periodic_distance(&self, i: usize, j: usize) -> usize {
        let (x, y) = (self.coords(i), self.coords(j));
        x.iter()
            .zip(&y)
            .map(|(&a, &b)| {
                let t = a.abs_diff(b);
                t.min(self.side - t)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Noise values on the torus, one block of L^d values per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLattice {
    pub geometry: Geometry,
    pub channels: usize,
    pub dist: NoiseDist,
    pub seed: u64,
    values: Vec<f64>,
}

impl NoiseLattice {
    /// Draws realization 0 of `seed`.
    pub fn new(geometry: Geometry, channels: usize, dist: NoiseDist, seed: u64) -> Self {
        Self::from_rng(geometry, channels, dist, seed, &mut rng::stream(seed, 0))
    }

    pub fn from_rng(
        geometry: Geometry,
        channels: usize,
        dist: NoiseDist,
        seed: u64,
        rng: &mut Rng,
    ) -> Self {
        let n = geometry.cells() * channels;
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        Self {
            geometry,
            channels,
            dist,
            seed,
            values,
        }
    }

    pub fn from_values(
        geometry: Geometry,
        channels: usize,
        dist: NoiseDist,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_dim(geometry.cells() * channels, values.len())?;
        Ok(Self {
            geometry,
            channels,
            dist,
            seed: 0,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.geometry.cells();
        &self.values[c * n..(c + 1) * n]
    }
}

/// Kernel combining noise into the pre-image of the pointwise map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// t(x) = ζ(x).
    Point,
    /// t(x) = 2^{-d/2} Σ_{c ∈ {0,1}^d} ζ(x + c).
    CornerAverage,
}

/// Bounded measurable map applied to the kernel output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointwiseMap {
    Identity,
    Tanh,
    TwoPhase { low: f64, high: f64 },
}

impl PointwiseMap {
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            PointwiseMap::Identity => t,
            PointwiseMap::Tanh => t.tanh(),
            PointwiseMap::TwoPhase { low, high } => {
                if t > 0.0 {
                    high
                } else {
                    low
                }
            }
        }
    }
}

/// Smooth weight ξ on the torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum XiWeight {
    Constant,
    /// 1 + amplitude·cos(2πx₀/L).
    Cosine {
        amplitude: f64,
    },
}

impl XiWeight {
    pub fn values(&self, g: &Geometry) -> Vec<f64> {
        match *self {
            XiWeight::Constant => vec![1.0; g.cells()],
            XiWeight::Cosine { amplitude } => (0..g.cells())
                .map(|c| {
                    let x0 = g.coords(c)[0] as f64;
                    1.0 + amplitude * (2.0 * std::f64::consts::PI * x0 / g.side as f64).cos()
                })
                .collect(),
        }
    }
}

/// Finite-range field a(x) = map(kernel(ζ)(x)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FieldModel {
    pub kernel: Kernel,
    pub map: PointwiseMap,
    pub xi: XiWeight,
}

impl FieldModel {
    pub fn identity() -> Self {
        Self {
            kernel: Kernel::Point,
            map: PointwiseMap::Identity,
            xi: XiWeight::Constant,
        }
    }

    /// Noise cells read by the field at cell x.
    pub fn noise_cells(&self, g: &Geometry, cell: usize) -> Vec<usize> {
        match self.kernel {
            Kernel::Point => vec![cell],
            Kernel::CornerAverage => {
                let x = g.coords(cell);
                (0..1usize << g.d)
                    .map(|mask| {
                        let y: Vec<usize> = (0..g.d)
                            .map(|a| (x[a] + ((mask >> a) & 1)) % g.side)
                            .collect();
                        g.cell(&y)
                    })
                    .collect()
            }
        }
    }

    /// E[a(x)] when a closed form exists.
    pub fn closed_form_mean(&self, dist: NoiseDist) -> Option<f64> {
        match self.map {
            PointwiseMap::Identity => Some(0.0),
            PointwiseMap::Tanh if dist.is_symmetric() => Some(0.0),
            PointwiseMap::TwoPhase { low, high }
                if dist.is_symmetric()
                    && !(dist == NoiseDist::Rademacher && self.kernel == Kernel::CornerAverage) =>
            {
                Some(0.5 * (low + high))
            }
            _ => None,
        }
    }
}

/// a(x) = map of the kernel applied to channel 0 of the noise, periodic wrap.
pub fn sample_field(model: &FieldModel, noise: &NoiseLattice) -> Vec<f64> {
    let g = noise.geometry;
    let z = noise.channel(0);
    match model.kernel {
        Kernel::Point => z.iter().map(|&t| model.map.apply(t)).collect(),
        Kernel::CornerAverage => {
            let norm = (1usize << g.d) as f64;
            let norm = norm.sqrt();
            (0..g.cells())
                .map(|c| {
                    let t: f64 = model.noise_cells(&g, c).iter().map(|&j| z[j]).sum();
                    model.map.apply(t / norm)
                })
                .collect()
        }
    }
}

/// Periodic window sums along every axis with offsets lo..=hi, or the full
/// axis sum when the window covers the axis.
fn window_sums(values: &[f64], g: &Geometry, lo: i64, hi: i64) -> Vec<f64> {
    let l = g.side;
    let width = (hi - lo + 1) as usize;
    let mut cur = values.to_vec();
    let mut line = vec![0.0; l];
    let mut prefix = vec![0.0; 2 * l + 1];
    for a in 0..g.d {
        let stride = g.stride(a);
        let mut next = vec![0.0; cur.len()];
        for base in 0..cur.len() {
            if (base / stride) % l != 0 {
                continue;
            }
            for (t, v) in line.iter_mut().enumerate() {
                *v = cur[base + t * stride];
            }
            if width >= l {
                let total: f64 = line.iter().sum();
                for t in 0..l {
                    next[base + t * stride] = total;
                }
                continue;
            }
            for t in 0..2 * l {
                prefix[t + 1] = prefix[t] + line[t % l];
            }
            for t in 0..l {
                let start = (t as i64 + lo).rem_euclid(l as i64) as usize;
                next[base + t * stride] = prefix[start + width] - prefix[start];
            }
        }
        cur = next;
    }
    cur
}

/// v_r(x): average of a over the periodic box x + {−r, …, r−1}^d; the
/// global mean once 2r ≥ L.
pub fn local_average(a: &[f64], geometry: Geometry, r: usize) -> Result<Vec<f64>> {
    check_dim(geometry.cells(), a.len())?;
    if r == 0 {
        return invalid("radius must be ≥ 1");
    }
    let l = geometry.side;
    let r = r.min(l);
    let (lo, hi) = if 2 * r >= l {
        (0, l as i64 - 1)
    } else {
        (-(r as i64), r as i64 - 1)
    };
    let width = ((hi - lo + 1) as usize).pow(geometry.d as u32) as f64;
    Ok(window_sums(a, &geometry, lo, hi)
        .into_iter()
        .map(|s| s / width)
        .collect())
}

fn smootherstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (u * (6.0 * u - 15.0) + 10.0)
    }
}

/// One-axis partition weights per level: for every coordinate x, the
/// nonzero (cell index, weight) pairs.
#[derive(Clone, Debug)]
struct AxisPartition {
    entries: Vec<Vec<(usize, f64)>>,
}

impl AxisPartition {
    fn new(side: usize, m: usize, count: usize) -> Result<Self> {
        let s = (1u64 << m) as f64;
        let h = 0.5 * s;
        let l = side as f64;
        let raw =
            |t: f64| smootherstep((t + h) / (2.0 * h)) * smootherstep((s + h - t) / (2.0 * h));
        let mut entries = Vec::with_capacity(side);
        for x in 0..side {
            let mut row = Vec::new();
            let mut total = 0.0;
            for yi in 0..count {
                let t0 = x as f64 - (yi as f64 * s);
                let w: f64 = [-l, 0.0, l].iter().map(|&k| raw(t0 + k)).sum();
                if w > 0.0 {
                    row.push((yi, w));
                    total += w;
                }
            }
            if !(total > 0.0) {
                return Err(Error::Internal(format!(
                    "partition of unity empty at x = {x}, level {m}"
                )));
            }
            for e in &mut row {
                e.1 /= total;
            }
            let check: f64 = row.iter().map(|e| e.1).sum();
            if (check - 1.0).abs() > 1e-12 {
                return Err(Error::Internal(format!(
                    "partition of unity sums to {check} at x = {x}"
                )));
            }
            entries.push(row);
        }
        Ok(Self { entries })
    }
}

/// Precomputed partition of unity for every level below the top.
#[derive(Clone, Debug)]
pub struct Decomposer {
    geometry: Geometry,
    structure_len: usize,
    top: usize,
    floor_log: usize,
    offsets: Vec<usize>,
    per_axis: Vec<usize>,
    axes: Vec<AxisPartition>,
    xi: Vec<f64>,
}

impl Decomposer {
    pub fn new(xi: XiWeight, structure: &DependenceStructure) -> Result<Self> {
        let geometry = Geometry::new(structure.d, structure.side)?;
        let top = structure.max_level();
        let floor_log = top - 1;
        let mut axes = Vec::with_capacity(top);
        let mut offsets = Vec::with_capacity(top + 1);
        let mut per_axis = Vec::with_capacity(top + 1);
        for m in 0..=top {
            offsets.push(structure.level_offset(m));
            per_axis.push(structure.per_axis(m));
            if m < top {
                axes.push(AxisPartition::new(
                    structure.side,
                    m,
                    structure.per_axis(m),
                )?);
            }
        }
        Ok(Self {
            geometry,
            structure_len: offsets[top] + 1,
            top,
            floor_log,
            offsets,
            per_axis,
            axes,
            xi: xi.values(&geometry),
        })
    }

    /// Σ_x u ξ η_y^m / L^d for every y at level m, added into `out`.
    fn accumulate(&self, u: &[f64], m: usize, out: &mut [f64]) {
        let g = &self.geometry;
        let scale = 1.0 / g.cells() as f64;
        let part = &self.axes[m];
        let c = self.per_axis[m];
        let base = self.offsets[m];
        let mut idx = vec![0usize; g.d];
        for cell in 0..g.cells() {
            let x = g.coords(cell);
            let val = u[cell] * self.xi[cell] * scale;
            if val == 0.0 {
                continue;
            }
            let rows: Vec<&Vec<(usize, f64)>> = x.iter().map(|&xa| &part.entries[xa]).collect();
            for e in idx.iter_mut() {
                *e = 0;
            }
            loop {
                let mut w = 1.0;
                let mut pos = 0;
                for a in 0..g.d {
                    let (yi, wa) = rows[a][idx[a]];
                    w *= wa;
                    pos = pos * c + yi;
                }
                out[base + pos] += val * w;
                let mut a = g.d;
                loop {
                    if a == 0 {
                        break;
                    }
                    a -= 1;
                    idx[a] += 1;
                    if idx[a] < rows[a].len() {
                        break;
                    }
                    idx[a] = 0;
                    if a == 0 {
                        a = usize::MAX;
                        break;
                    }
                }
                if a == usize::MAX {
                    break;
                }
            }
        }
    }

    /// Decomposes the field v = a into level contributions.
    pub fn decompose(&self, a: &[f64]) -> Result<MultilevelSample> {
        let g = self.geometry;
        check_dim(g.cells(), a.len())?;
        let mut out = vec![0.0; self.structure_len];
        let mut prev = local_average(a, g, 1)?;
        self.accumulate(&prev, 0, &mut out);
        for m in 1..=self.floor_log {
            let next = local_average(a, g, 1 << m)?;
            let diff: Vec<f64> = next.iter().zip(&prev).map(|(p, q)| p - q).collect();
            self.accumulate(&diff, m, &mut out);
            prev = next;
        }
        let scale = 1.0 / g.cells() as f64;
        let rest: f64 = (0..g.cells()).map(|x| (a[x] - prev[x]) * self.xi[x]).sum();
        out[self.offsets[self.top]] = rest * scale;
        MultilevelSample::new(self.structure_len, 1, out)
    }

    /// L^{-d}Σ ξ a.
    pub fn direct(&self, a: &[f64]) -> f64 {
        a.iter().zip(&self.xi).map(|(u, w)| u * w).sum::<f64>() / self.geometry.cells() as f64
    }
}

/// X_y^m from the partition-of-unity telescoping decomposition of the
/// field; the remainder a − v_{2^⌊log₂L⌋} goes to the single top index.
pub fn multilevel_decompose(
    model: &FieldModel,
    noise: &NoiseLattice,
    structure: &DependenceStructure,
) -> Result<MultilevelSample> {
    check_geometry(&noise.geometry, structure)?;
    let a = sample_field(model, noise);
    Decomposer::new(model.xi, structure)?.decompose(&a)
}

fn check_geometry(g: &Geometry, structure: &DependenceStructure) -> Result<()> {
    check_dim(structure.d, g.d)?;
    check_dim(structure.side, g.side)
}

/// Nonlinearity g of the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    Identity,
    Cube,
    SignedSqrt,
}

impl Nonlinearity {
    pub fn apply(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Identity => s,
            Nonlinearity::Cube => s * s * s,
            Nonlinearity::SignedSqrt => s.signum() * s.abs().sqrt(),
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" => Nonlinearity::Identity,
            "cube" => Nonlinearity::Cube,
            "signed-sqrt" => Nonlinearity::SignedSqrt,
            _ => return invalid(format!("unknown nonlinearity '{s}'")),
        })
    }
}

/// Synthetic generator X_y^m = w_m L^{-d}(g(S_y^m) − E g(S_y^m)).
///
/// Component c ≥ 1 uses g(S_c + α S_0) with its own noise channel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticSpec {
    /// Per-level weights; the last entry repeats for higher levels.
    pub weights: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub noise: NoiseDist,
    pub dim: usize,
    pub coupling: f64,
    pub b: f64,
}

impl SyntheticSpec {
    pub fn new(
        weights: Vec<f64>,
        nonlinearity: Nonlinearity,
        noise: NoiseDist,
        dim: usize,
        b: f64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("weights must be finite and nonnegative");
        }
        if dim == 0 || dim > crate::linalg::MAX_DIM {
            return invalid(format!("target dimension {dim} outside 1..=8"));
        }
        Ok(Self {
            weights,
            nonlinearity,
            noise,
            dim,
            coupling: 0.5,
            b,
        })
    }

    pub fn weight(&self, m: usize) -> f64 {
        *self
            .weights
            .get(m)
            .unwrap_or_else(|| self.weights.last().unwrap())
    }
}

#[derive(Clone, Debug)]
struct SyntheticLevel {
    lo: i64,
    hi: i64,
    cells: usize,
    weight: f64,
    /// Centering constants per component.
    means: Vec<f64>,
}

/// Generator bound to a structure, with cached centering and partitions.
#[derive(Clone, Debug)]
pub struct PreparedGenerator {
    generator: Generator,
    geometry: Geometry,
    len: usize,
    offsets: Vec<usize>,
    per_axis: Vec<usize>,
    levels: Vec<SyntheticLevel>,
    decomposer: Option<Decomposer>,
    field_mean: f64,
    /// Sample size behind estimated centering constants, if any.
    pub centering_samples: Option<usize>,
}

/// Field-based generator: decomposition of the centered field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldGenerator {
    pub model: FieldModel,
    pub noise: NoiseDist,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Synthetic(SyntheticSpec),
    Field(FieldGenerator),
}

impl Generator {
    pub fn dim(&self) -> usize {
        match self {
            Generator::Synthetic(s) => s.dim,
            Generator::Field(_) => 1,
        }
    }

    pub fn noise(&self) -> NoiseDist {
        match self {
            Generator::Synthetic(s) => s.noise,
            Generator::Field(f) => f.noise,
        }
    }

    pub fn channels(&self) -> usize {
        self.dim()
    }

    pub fn prepare(&self, structure: &DependenceStructure) -> Result<PreparedGenerator> {
        let geometry = Geometry::new(structure.d, structure.side)?;
        let top = structure.max_level();
        let offsets: Vec<usize> = (0..=top).map(|m| structure.level_offset(m)).collect();
        let per_axis: Vec<usize> = (0..=top).map(|m| structure.per_axis(m)).collect();
        let mut prepared = PreparedGenerator {
            generator: self.clone(),
            geometry,
            len: structure.len(),
            offsets,
            per_axis,
            levels: Vec::new(),
            decomposer: None,
            field_mean: 0.0,
            centering_samples: None,
        };
        match self {
            Generator::Synthetic(spec) => {
                for m in 0..=top {
                    let h = structure.half_width(m).floor() as i64;
                    let l = structure.side as i64;
                    let (lo, hi) = if 2 * h + 1 >= l { (0, l - 1) } else { (-h, h) };
                    let cells = ((hi - lo + 1) as usize).pow(structure.d as u32);
                    let mut means = Vec::with_capacity(spec.dim);
                    for c in 0..spec.dim {
                        let alpha = if c == 0 { 0.0 } else { spec.coupling };
                        let (mu, est) = synthetic_mean(spec, cells, alpha, m as u64)?;
                        if est {
                            prepared.centering_samples = Some(CENTERING_SAMPLES);
                        }
                        means.push(mu);
                    }
                    prepared.levels.push(SyntheticLevel {
                        lo,
                        hi,
                        cells,
                        weight: spec.weight(m),
                        means,
                    });
                }
            }
            Generator::Field(f) => {
                prepared.decomposer = Some(Decomposer::new(f.model.xi, structure)?);
                prepared.field_mean = match f.model.closed_form_mean(f.noise) {
                    Some(v) => v,
                    None => {
                        prepared.centering_samples = Some(CENTERING_SAMPLES);
                        estimate_field_mean(&f.model, f.noise, structure.d)
                    }
                };
            }
        }
        Ok(prepared)
    }
}

/// E g(S_c + α S_0) for a normalized box sum of `cells` noise values.
fn synthetic_mean(spec: &SyntheticSpec, cells: usize, alpha: f64, tag: u64) -> Result<(f64, bool)> {
    let n = cells as f64;
    match spec.nonlinearity {
        Nonlinearity::Identity => Ok((0.0, false)),
        Nonlinearity::Cube => Ok((
            (1.0 + alpha.powi(3)) * spec.noise.third_cumulant() / n.sqrt(),
            false,
        )),
        Nonlinearity::SignedSqrt if spec.noise.is_symmetric() => Ok((0.0, false)),
        Nonlinearity::SignedSqrt => {
            let seed = rng::derive(0x5EED_CE17, tag ^ ((cells as u64) << 8));
            let total: Vec<f64> = (0..CENTERING_SAMPLES as u64)
                .into_par_iter()
                .map(|k| {
                    let mut r = rng::stream(seed, k);
                    let s0: f64 =
                        (0..cells).map(|_| spec.noise.sample(&mut r)).sum::<f64>() / n.sqrt();
                    let t = if alpha != 0.0 {
                        let s1: f64 =
                            (0..cells).map(|_| spec.noise.sample(&mut r)).sum::<f64>() / n.sqrt();
                        s1 + alpha * s0
                    } else {
                        s0
                    };
                    spec.nonlinearity.apply(t)
                })
                .collect();
            Ok((crate::stats::mean(&total), true))
        }
    }
}

fn estimate_field_mean(model: &FieldModel, dist: NoiseDist, d: usize) -> f64 {
    let corners = match model.kernel {
        Kernel::Point => 1,
        Kernel::CornerAverage => 1usize << d,
    };
    let norm = (corners as f64).sqrt();
    let draws: Vec<f64> = (0..CENTERING_SAMPLES as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(0xF1E1_D000, k);
            let t: f64 = (0..corners).map(|_| dist.sample(&mut r)).sum();
            model.map.apply(t / norm)
        })
        .collect();
    crate::stats::mean(&draws)
}

impl PreparedGenerator {
    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn n_indices(&self) -> usize {
        self.len
    }

    pub fn field_mean(&self) -> f64 {
        self.field_mean
    }

    pub fn sample_noise(&self, seed: u64, rng: &mut Rng) -> NoiseLattice {
        NoiseLattice::from_rng(
            self.geometry,
            self.generator.channels(),
            self.generator.noise(),
            seed,
            rng,
        )
    }

    /// All X_y^m for one noise realization.
    pub fn realize(&self, noise: &NoiseLattice) -> Result<MultilevelSample> {
        check_dim(
            self.geometry.cells() * self.generator.channels(),
            noise.values().len(),
        )?;
        match &self.generator {
            Generator::Synthetic(spec) => Ok(self.realize_synthetic(spec, noise)),
            Generator::Field(f) => {
                let mut a = sample_field(&f.model, noise);
                for v in &mut a {
                    *v -= self.field_mean;
                }
                self.decomposer
                    .as_ref()
                    .expect("field generator has a decomposer")
                    .decompose(&a)
            }
        }
    }

    fn realize_synthetic(&self, spec: &SyntheticSpec, noise: &NoiseLattice) -> MultilevelSample {
        let g = &self.geometry;
        let n = spec.dim;
        let scale = 1.0 / g.cells() as f64;
        let mut out = MultilevelSample::zeros(self.len, n);
        let mut cache: Vec<WindowCache> = Vec::new();
        for (m, lev) in self.levels.iter().enumerate() {
            if lev.weight == 0.0 {
                continue;
            }
            let key = (lev.lo, lev.hi);
            if !cache.iter().any(|(k, _)| *k == key) {
                let sums: Vec<Vec<f64>> = (0..n)
                    .map(|c| window_sums(noise.channel(c), g, lev.lo, lev.hi))
                    .collect();
                cache.push((key, sums));
            }
            let sums = &cache.iter().find(|(k, _)| *k == key).unwrap().1;
            let norm = (lev.cells as f64).sqrt();
            let c = self.per_axis[m];
            let step = 1usize << m;
            let count = c.pow(g.d as u32);
            let mut y = vec![0usize; g.d];
            for p in 0..count {
                let mut rest = p;
                for a in (0..g.d).rev() {
                    y[a] = (rest % c) * step;
                    rest /= c;
                }
                let cell = g.cell(&y);
                let s0 = sums[0][cell] / norm;
                let row = out.value_mut(self.offsets[m] + p);
                for comp in 0..n {
                    let t = if comp == 0 {
                        s0
                    } else {
                        sums[comp][cell] / norm + spec.coupling * s0
                    };
                    row[comp] = lev.weight * scale * (spec.nonlinearity.apply(t) - lev.means[comp]);
                }
            }
        }
        out
    }
}

type WindowCache = ((i64, i64), Vec<Vec<f64>>);

/// X_y^m = w_m L^{-d}(g(S_y^m) − E g(S_y^m)) with S_y^m the normalized noise
/// sum over the support box of (m, y).
pub fn synthetic_multilevel(
    spec: &SyntheticSpec,
    structure: &DependenceStructure,
    noise: &NoiseLattice,
) -> Result<MultilevelSample> {
    check_geometry(&noise.geometry, structure)?;
    Generator::Synthetic(spec.clone())
        .prepare(structure)?
        .realize(noise)
}

/// Exact law of X by enumerating every Rademacher configuration.
pub fn brute_force_law(
    generator: &Generator,
    structure: &DependenceStructure,
) -> Result<DiscreteLaw> {
    if generator.noise() != NoiseDist::Rademacher {
        return invalid("brute force requires Rademacher noise");
    }
    let g = Geometry::new(structure.d, structure.side)?;
    let cells = g.cells() * generator.channels();
    if cells > MAX_BRUTE_FORCE_CELLS {
        return Err(Error::TooLarge(format!(
            "{cells} noise cells exceed {MAX_BRUTE_FORCE_CELLS}"
        )));
    }
    let prepared = generator.prepare(structure)?;
    let count = 1usize << cells;
    let p = 1.0 / count as f64;
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::with_capacity(count);
    for bits in 0..count {
        let values = (0..cells)
            .map(|i| if (bits >> i) & 1 == 1 { 1.0 } else { -1.0 })
            .collect();
        let noise =
            NoiseLattice::from_values(g, generator.channels(), NoiseDist::Rademacher, values)?;
        atoms.push((prepared.realize(&noise)?.total(), p));
    }
    DiscreteLaw::new(merge_atoms(atoms))
}

/// Sorts atoms lexicographically and merges those equal up to rounding.
fn merge_atoms(mut atoms: Vec<(Vec<f64>, f64)>) -> Vec<(Vec<f64>, f64)> {
    atoms.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let close = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
    };
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, p) in atoms {
        match out.last_mut() {
            Some(last) if close(&last.0, &x) => last.1 += p,
            _ => out.push((x, p)),
        }
    }
    out
}

/// Monte Carlo output.
#[derive(Clone, Debug)]
pub struct MonteCarlo {
    pub samples: SampleSet,
    pub per_index: Option<Vec<MultilevelSample>>,
}

/// n independent realizations of X; realization k reads stream k of
/// `master_seed`.
pub fn monte_carlo(
    generator: &PreparedGenerator,
    n: usize,
    master_seed: u64,
    keep_indices: bool,
) -> Result<MonteCarlo> {
    if n == 0 {
        return invalid("n must be ≥ 1");
    }
    let dim = generator.dim();
    let draw = |k: u64| realization(generator, master_seed, k);
    if !keep_indices {
        let totals: Vec<Vec<f64>> = (0..n as u64)
            .into_par_iter()
            .map(|k| draw(k).map(|s| s.total()))
            .collect::<Result<_>>()?;
        return Ok(MonteCarlo {
            samples: SampleSet::new(dim, totals.concat(), master_seed)?,
            per_index: None,
        });
    }
    let draws: Vec<MultilevelSample> = (0..n as u64)
        .into_par_iter()
        .map(draw)
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(n * dim);
    for s in &draws {
        values.extend(s.total());
    }
    Ok(MonteCarlo {
        samples: SampleSet::new(dim, values, master_seed)?,
        per_index: Some(draws),
    })
}

/// Single realization k, for determinism checks.
pub fn realization(
    generator: &PreparedGenerator,
    master_seed: u64,
    k: u64,
) -> Result<MultilevelSample> {
    let mut r = rng::stream(master_seed, k);
    let noise = generator.sample_noise(master_seed, &mut r);
    generator.realize(&noise)
}

/// Named generator with its structure parameters.
#[derive(Clone, Debug, Serialize)]
pub struct Preset {
    pub name: String,
    pub generator: Generator,
    pub k: f64,
    pub gamma: f64,
    /// Norm budget; `None` means it grows like L^{d/2}.
    pub b: Option<f64>,
}

pub const PRESETS: [&str; 6] = [
    "identity-gauss",
    "identity-rademacher",
    "cube",
    "signed-sqrt-uniform",
    "field-twophase",
    "identity-rademacher-l0",
];

impl Preset {
    /// Looks up a preset; `dim` is the target dimension N.
    pub fn named(name: &str, dim: usize) -> Result<Self> {
        let synth = |w: Vec<f64>, g: Nonlinearity, noise: NoiseDist, b: f64| {
            SyntheticSpec::new(w, g, noise, dim, b).map(Generator::Synthetic)
        };
        let (generator, gamma, b) = match name {
            "identity-gauss" => (
                synth(vec![1.0], Nonlinearity::Identity, NoiseDist::Gaussian, 1.0)?,
                2.0,
                Some(1.0),
            ),
            "identity-rademacher" => (
                synth(
                    vec![1.0],
                    Nonlinearity::Identity,
                    NoiseDist::Rademacher,
                    1.0,
                )?,
                2.0,
                Some(1.0),
            ),
            "cube" => (
                synth(
                    (0..24).map(|m| 0.5f64.powi(m)).collect(),
                    Nonlinearity::Cube,
                    NoiseDist::CenteredExponential,
                    4.0,
                )?,
                1.0 / 3.0,
                Some(4.0),
            ),
            "signed-sqrt-uniform" => (
                synth(vec![1.0], Nonlinearity::SignedSqrt, NoiseDist::Uniform, 1.0)?,
                2.0,
                Some(1.0),
            ),
            "identity-rademacher-l0" => (
                synth(
                    vec![1.0, 0.0],
                    Nonlinearity::Identity,
                    NoiseDist::Rademacher,
                    1.0,
                )?,
                2.0,
                Some(1.0),
            ),
            "field-twophase" => {
                if dim != 1 {
                    return invalid("field presets are scalar");
                }
                (
                    Generator::Field(FieldGenerator {
                        model: FieldModel {
                            kernel: Kernel::CornerAverage,
                            map: PointwiseMap::TwoPhase {
                                low: -1.0,
                                high: 1.0,
                            },
                            xi: XiWeight::Constant,
                        },
                        noise: NoiseDist::Gaussian,
                    }),
                    2.0,
                    None,
                )
            }
            _ => return invalid(format!("unknown preset '{name}'")),
        };
        Ok(Self {
            name: name.to_string(),
            generator,
            k: 2.0,
            gamma,
            b,
        })
    }

    pub fn budget(&self, d: usize, side: usize) -> f64 {
        self.b
            .unwrap_or_else(|| (side as f64).powf(d as f64 / 2.0).max(1.0))
    }

    pub fn structure(&self, d: usize, side: usize) -> Result<DependenceStructure> {
        DependenceStructure::new(d, side, self.k, self.gamma, self.budget(d, side), true)
    }
}

/// Header of a realization dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub d: u64,
    pub side: u64,
    pub dim: u64,
    pub n: u64,
}

/// Writes the header (d, L, N, n) as little-endian u64 followed by the
/// values as little-endian f64.
pub fn write_dump(path: &Path, d: usize, side: usize, samples: &SampleSet) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for h in [
        d as u64,
        side as u64,
        samples.dim() as u64,
        samples.n() as u64,
    ] {
        f.write_all(&h.to_le_bytes())?;
    }
    for v in samples.values() {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, SampleSet)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 || (bytes.len() - 32) % 8 != 0 {
        return invalid("truncated dump");
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let header = DumpHeader {
        d: word(0),
        side: word(1),
        dim: word(2),
        n: word(3),
    };
    let values: Vec<f64> = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_dim((header.dim * header.n) as usize, values.len())?;
    let samples = SampleSet::new(header.dim as usize, values, 0)?;
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_average_constant_and_global() {
        let g = Geometry::new(2, 6).unwrap();
        let a = vec![2.5; 36];
        assert!(local_average(&a, g, 2)
            .unwrap()
            .iter()
            .all(|v| (v - 2.5).abs() < 1e-14));
        let b: Vec<f64> = (0..36).map(|i| i as f64).collect();
        let v = local_average(&b, g, 3).unwrap();
        assert!(v.iter().all(|x| (x - 17.5).abs() < 1e-12));
    }

    #[test]
    fn partition_rows_sum_to_one() {
        for (side, m) in [(16usize, 0), (16, 2), (12, 3), (5, 1)] {
            let c = side.div_ceil(1 << m);
            let p = AxisPartition::new(side, m, c).unwrap();
            for row in &p.entries {
                assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_kernel_range() {
        let g = Geometry::new(1, 8).unwrap();
        let m = FieldModel {
            kernel: Kernel::CornerAverage,
            ..FieldModel::identity()
        };
        assert_eq!(m.noise_cells(&g, 7), vec![7, 0]);
    }
}
