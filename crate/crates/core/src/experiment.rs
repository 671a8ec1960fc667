//! Experiment configuration, orchestration and CSV/JSON output.
//!
//! Config files are flat `key = value` lines; `#` starts a comment, blank
//! lines are ignored and list values are comma separated. Policy overrides
//! use `policy.KEY = value`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::concentration::{
    self, close_to_gaussian_split, moderate_grouping, moderate_tail_rows, orlicz_scale,
    pool_sum_tails, predicted_remainder_norms, stretched_norm, PoolSumConfig,
};
use crate::distance::{
    sliced_w1, soft_clip_family, tv_discrete, w1_discrete_discrete, w1_discrete_vs_gaussian,
    w1_values_gaussian, DiscreteLaw, SampleSet,
};
use crate::error::{invalid, Error, Result};
use crate::fields::{brute_force_law, monte_carlo, Preset};
use crate::gaussian::GaussianLaw;
use crate::linalg::{halton, SpdMatrix};
use crate::multilevel::{bound_report, variance_norm_bound, DependenceStructure, PolicyTable};
use crate::rng;
use crate::stats;
use crate::stein::{
    majorant_average_with, stein_residual, third_derivative_certificate, MajorantKind,
    MajorantSampler, QuadratureSpec, SteinSolution,
};

/// Bumped whenever a column set changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CltRate,
    SteinCertify,
    BoundCalc,
    Tails,
    Moderate,
    Oracle,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CltRate => "clt-rate",
            ExperimentKind::SteinCertify => "stein-certify",
            ExperimentKind::BoundCalc => "bound-calc",
            ExperimentKind::Tails => "tails",
            ExperimentKind::Moderate => "moderate",
            ExperimentKind::Oracle => "oracle",
        }
    }

    fn statistical(&self) -> bool {
        matches!(
            self,
            ExperimentKind::CltRate | ExperimentKind::Tails | ExperimentKind::Moderate
        )
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            ExperimentKind::CltRate => &[
                "L",
                "n",
                "estimated_variance",
                "normalized_w1",
                "sliced_w1",
                "mc_floor",
                "eps",
                "ell",
                "eps_term",
                "condition_lhs",
                "r_lowlevel",
                "r_alllevel",
                "r_tail",
                "bound_total",
                "seed",
                "status",
            ],
            ExperimentKind::SteinCertify => &[
                "N", "eps", "function", "check", "value", "bound", "ratio", "pass",
            ],
            ExperimentKind::BoundCalc => &[
                "L",
                "eps",
                "eps_clamped",
                "ell",
                "eps_term",
                "condition_lhs",
                "condition_rhs",
                "condition_satisfied",
                "r_lowlevel",
                "r_alllevel",
                "r_tail",
                "total",
                "variance_norm_bound",
            ],
            ExperimentKind::Tails => &[
                "L",
                "kind",
                "preset",
                "r",
                "empirical_tail",
                "bound",
                "valid_flag",
                "slack",
            ],
            ExperimentKind::Moderate => &[
                "L",
                "ell",
                "quantity",
                "r",
                "value",
                "reference",
                "ratio",
                "valid_flag",
            ],
            ExperimentKind::Oracle => &[
                "L",
                "n",
                "atoms",
                "w1_law",
                "tv_law",
                "w1_gaussian_closed",
                "w1_gaussian_adaptive",
                "gaussian_diff",
            ],
        }
    }

    /// First 16 hex digits of SHA-256 over version, experiment and columns.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(SCHEMA_VERSION.to_le_bytes());
        h.update(self.name().as_bytes());
        for c in self.columns() {
            h.update(b",");
            h.update(c.as_bytes());
        }
        h.finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clt-rate" => ExperimentKind::CltRate,
            "stein-certify" => ExperimentKind::SteinCertify,
            "bound-calc" | "bound-calculator" => ExperimentKind::BoundCalc,
            "tails" => ExperimentKind::Tails,
            "moderate" => ExperimentKind::Moderate,
            "oracle" => ExperimentKind::Oracle,
            _ => return Err(Error::Config(format!("unknown experiment '{s}'"))),
        })
    }
}

/// Full experiment configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub d: usize,
    pub n_dim: usize,
    /// Overrides of the preset's structure parameters.
    pub gamma: Option<f64>,
    pub k: Option<f64>,
    pub b: Option<f64>,
    pub l_list: Vec<usize>,
    pub n_samples: usize,
    pub preset: String,
    pub master_seed: u64,
    pub output_path: Option<PathBuf>,
    pub policy: PolicyTable,
    pub eps_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub ell: Option<usize>,
    pub directions: usize,
    /// Sum length for pooled tail checks.
    pub sum_terms: usize,
    /// Points for third-derivative checks.
    pub points: usize,
    /// Λ = lambda_scale·L^{-d}·Id for the bound calculator.
    pub lambda_scale: f64,
    pub fast: bool,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            d: 1,
            n_dim: 1,
            gamma: None,
            k: None,
            b: None,
            l_list: Vec::new(),
            n_samples: 10_000,
            preset: "cube".into(),
            master_seed: 1,
            output_path: None,
            policy: PolicyTable::default(),
            eps_list: vec![0.25, 0.5],
            delta_list: vec![0.1, 0.5],
            ell: None,
            directions: 64,
            sum_terms: 256,
            points: 1000,
            lambda_scale: 1.0,
            fast: false,
        }
    }

    /// Parses the flat key/value grammar on top of defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<Self> = None;
        let mut pending = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "experiment" {
                cfg = Some(Self::new(v.parse()?));
            } else {
                pending.push((k.to_string(), v.to_string()));
            }
        }
        let mut cfg = cfg.ok_or_else(|| Error::Config("missing 'experiment'".into()))?;
        for (k, v) in pending {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| num(key, s))
                .collect()
        }
        if let Some(p) = key.strip_prefix("policy.") {
            let v: f64 = num(key, value)?;
            return self
                .policy
                .set(p, v)
                .map_err(|e| Error::Config(e.to_string()));
        }
        match key {
            "experiment" => self.experiment = value.parse()?,
            "d" => self.d = num(key, value)?,
            "N" => self.n_dim = num(key, value)?,
            "gamma" => self.gamma = Some(num(key, value)?),
            "K" => self.k = Some(num(key, value)?),
            "B" => self.b = Some(num(key, value)?),
            "L_list" => self.l_list = list(key, value)?,
            "n_samples" => self.n_samples = num(key, value)?,
            "preset" => self.preset = value.to_string(),
            "master_seed" => self.master_seed = num(key, value)?,
            "output_path" => self.output_path = Some(PathBuf::from(value)),
            "eps_list" => self.eps_list = list(key, value)?,
            "delta_list" => self.delta_list = list(key, value)?,
            "ell" => self.ell = Some(num(key, value)?),
            "directions" => self.directions = num(key, value)?,
            "sum_terms" => self.sum_terms = num(key, value)?,
            "points" => self.points = num(key, value)?,
            "lambda_scale" => self.lambda_scale = num(key, value)?,
            "fast" => self.fast = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("L_list must be strictly increasing".into()));
        }
        if self.experiment.statistical() && self.n_samples < 1000 {
            return Err(Error::Config("n_samples must be ≥ 1000".into()));
        }
        if self.d == 0 || self.d > 3 {
            return Err(Error::Config("d must be in 1..=3".into()));
        }
        if self.n_dim == 0 || self.n_dim > crate::linalg::MAX_DIM {
            return Err(Error::Config("N must be in 1..=8".into()));
        }
        Ok(())
    }

    fn preset(&self) -> Result<Preset> {
        let mut p = Preset::named(&self.preset, self.n_dim)?;
        if let Some(k) = self.k {
            p.k = k;
        }
        if let Some(g) = self.gamma {
            p.gamma = g;
        }
        if let Some(b) = self.b {
            p.b = Some(b);
        }
        Ok(p)
    }
}

/// Rows as formatted cells plus the column set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultTable {
    pub experiment: ExperimentKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ResultTable {
    fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: kind,
            columns: kind.columns().iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric values of a column; unparsable cells become NaN.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let c = self
            .column(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no column '{name}'")))?;
        Ok(self
            .rows
            .iter()
            .map(|r| r[c].parse().unwrap_or(f64::NAN))
            .collect())
    }

    /// CSV text with a trailing schema_hash column.
    pub fn to_csv(&self) -> String {
        let hash = self.experiment.schema_hash();
        let mut s = csv_line(
            self.columns
                .iter()
                .map(String::as_str)
                .chain(["schema_hash"]),
        );
        for r in &self.rows {
            s.push_str(&csv_line(
                r.iter().map(String::as_str).chain([hash.as_str()]),
            ));
        }
        s
    }
}

fn csv_line<'a>(cells: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for (i, c) in cells.enumerate() {
        if i > 0 {
            out.push(',');
        }
        if c.contains([',', '"', '\n']) {
            out.push('"');
            out.push_str(&c.replace('"', "\"\""));
            out.push('"');
        } else {
            out.push_str(c);
        }
    }
    out.push('\n');
    out
}

/// Destination for rows as they are produced; each row is flushed whole.
struct Sink {
    table: ResultTable,
    writer: Option<BufWriter<File>>,
    hash: String,
}

impl Sink {
    fn new(kind: ExperimentKind, path: Option<&Path>) -> Result<Self> {
        let table = ResultTable::new(kind);
        let hash = kind.schema_hash();
        let writer = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                w.write_all(
                    csv_line(
                        table
                            .columns
                            .iter()
                            .map(String::as_str)
                            .chain(["schema_hash"]),
                    )
                    .as_bytes(),
                )?;
                w.flush()?;
                Some(w)
            }
            None => None,
        };
        Ok(Self {
            table,
            writer,
            hash,
        })
    }

    fn push(&mut self, row: Vec<String>) -> Result<()> {
        debug_assert_eq!(row.len(), self.table.columns.len());
        if let Some(w) = &mut self.writer {
            w.write_all(
                csv_line(row.iter().map(String::as_str).chain([self.hash.as_str()])).as_bytes(),
            )?;
            w.flush()?;
        }
        self.table.rows.push(row);
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Runs the experiment, streaming rows to `config.output_path` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let mut sink = Sink::new(config.experiment, config.output_path.as_deref())?;
    match config.experiment {
        ExperimentKind::CltRate => clt_rate(config, &mut sink)?,
        ExperimentKind::SteinCertify => stein_certify(config, &mut sink)?,
        ExperimentKind::BoundCalc => bound_calc(config, &mut sink)?,
        ExperimentKind::Tails => tails(config, &mut sink)?,
        ExperimentKind::Moderate => moderate(config, &mut sink)?,
        ExperimentKind::Oracle => oracle(config, &mut sink)?,
    }
    Ok(sink.table)
}

/// Samples of X for one side length.
pub fn sample_x(config: &ExperimentConfig, side: usize) -> Result<SampleSet> {
    let preset = config.preset()?;
    let structure = preset.structure(config.d, side)?;
    let prepared = preset.generator.prepare(&structure)?;
    Ok(monte_carlo(
        &prepared,
        config.n_samples,
        rng::derive(config.master_seed, side as u64),
        false,
    )?
    .samples)
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let m = stats::mean(v);
    let sd = stats::variance(v).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

/// W1 between a standardized Gaussian sample of size n and N(0, 1).
pub fn mc_floor(n: usize, seed: u64) -> Result<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::stream(seed, 0);
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    w1_values_gaussian(&standardize(&z), 1.0)
}

fn sample_covariance(s: &SampleSet) -> Vec<f64> {
    let n = s.dim();
    let cols: Vec<Vec<f64>> = (0..n).map(|a| s.column(a)).collect();
    let means: Vec<f64> = cols.iter().map(|c| stats::mean(c)).collect();
    let mut cov = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = stats::sum(
                cols[a]
                    .iter()
                    .zip(&cols[b])
                    .map(|(x, y)| (x - means[a]) * (y - means[b])),
            ) / (s.n() as f64 - 1.0);
            cov[a * n + b] = v;
            cov[b * n + a] = v;
        }
    }
    cov
}

fn clt_rate(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let preset = config.preset()?;
    let ncols = sink.table.columns.len();
    for &side in &config.l_list {
        let seed = rng::derive(config.master_seed, side as u64);
        let row = (|| -> Result<Vec<String>> {
            let samples = sample_x(config, side)?;
            let cov = sample_covariance(&samples);
            let n = samples.dim();
            let (w1, sliced) = if n == 1 {
                let w = w1_values_gaussian(&standardize(samples.values()), 1.0)?;
                (w, w)
            } else {
                let sd: Vec<f64> = (0..n).map(|a| cov[a * n + a].sqrt()).collect();
                let cols: Vec<Vec<f64>> = (0..n).map(|a| standardize(&samples.column(a))).collect();
                let mut vals = Vec::with_capacity(samples.n() * n);
                for k in 0..samples.n() {
                    vals.extend(cols.iter().map(|c| c[k]));
                }
                let corr: Vec<f64> = (0..n * n)
                    .map(|i| cov[i] / (sd[i / n] * sd[i % n]))
                    .collect();
                let law = GaussianLaw::new(SpdMatrix::new(n, corr)?);
                let std_set = SampleSet::new(n, vals, seed)?;
                (
                    w1_values_gaussian(&cols[0], 1.0)?,
                    sliced_w1(&std_set, &law, config.directions, rng::derive(seed, 1))?,
                )
            };
            let floor = mc_floor(samples.n(), rng::derive(seed, 2))?;
            let structure = preset.structure(config.d, side)?;
            let report =
                bound_report(&structure, &SpdMatrix::new(n, cov.clone())?, &config.policy)?;
            let b = &report.bound;
            Ok(vec![
                side.to_string(),
                samples.n().to_string(),
                f(cov[0]),
                f(w1),
                f(sliced),
                f(floor),
                f(b.eps),
                b.ell.to_string(),
                f(b.eps_term),
                f(b.condition_lhs),
                f(b.r_lowlevel),
                f(b.r_alllevel),
                f(b.r_tail),
                f(b.total),
                seed.to_string(),
                "ok".into(),
            ])
        })();
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                log::warn!("L = {side}: {e}");
                let mut r = vec![String::new(); ncols];
                r[0] = side.to_string();
                r[ncols - 2] = seed.to_string();
                r[ncols - 1] = format!("error: {e}");
                r
            }
        };
        sink.push(row)?;
    }
    Ok(())
}

/// Evaluation points for residual checks: 9 per axis-line in 1D, a 3×3
/// grid in 2D, a 9-point cross otherwise.
pub fn residual_grid(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect(),
        2 => {
            let g = [-1.5, 0.0, 1.5];
            g.iter()
                .flat_map(|&a| g.iter().map(move |&b| vec![a, b]))
                .collect()
        }
        _ => {
            let mut pts = vec![vec![0.0; n]];
            for a in 0..4 {
                for s in [-1.0, 1.0] {
                    let mut p = vec![0.0; n];
                    p[a % n] = s;
                    pts.push(p);
                }
            }
            pts
        }
    }
}

/// Halton points in [−r, r]^N.
pub fn halton_box(n: usize, count: usize, r: f64) -> Vec<Vec<f64>> {
    (1..=count as u64)
        .map(|i| {
            (0..n)
                .map(|a| r * (2.0 * halton(i, crate::linalg::PRIMES[a]) - 1.0))
                .collect()
        })
        .collect()
}

/// Outer quadrature order for majorant averages.
pub fn majorant_outer_nodes(n: usize) -> usize {
    if n == 1 {
        16
    } else {
        6
    }
}

fn stein_certify(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let n = config.n_dim;
    let law = GaussianLaw::standard(n)?;
    let grid = residual_grid(n);
    let points = halton_box(n, config.points, 4.0);
    for &eps in &config.eps_list {
        for phi in soft_clip_family(n) {
            let spec = if config.fast {
                QuadratureSpec::fast_for(n)
            } else {
                QuadratureSpec::default_for(n)
            };
            let sol = SteinSolution::new(&phi, &law, eps, spec)?;
            let mut res: f64 = 0.0;
            for p in &grid {
                res = res.max(stein_residual(&sol, p)?);
            }
            let mut emit = |check: &str, value: f64, bound: f64| {
                sink.push(vec![
                    n.to_string(),
                    f(eps),
                    phi.label().to_string(),
                    check.to_string(),
                    f(value),
                    f(bound),
                    f(value / bound),
                    (value <= bound).to_string(),
                ])
            };
            emit("residual", res, 1e-3)?;
            let third = third_derivative_certificate(&sol, &points)?;
            emit(
                "third_derivative",
                third.max_ratio * third.bound,
                third.bound,
            )?;
            let fast = SteinSolution::new(&phi, &law, eps, QuadratureSpec::fast_for(n))?;
            let sampler = MajorantSampler::new(n);
            for &delta in &config.delta_list {
                for kind in [MajorantKind::H, MajorantKind::HPrime] {
                    let avg = majorant_average_with(
                        &fast,
                        delta,
                        kind,
                        majorant_outer_nodes(n),
                        &sampler,
                    )?;
                    let name = match kind {
                        MajorantKind::H => format!("majorant_h_delta={delta}"),
                        MajorantKind::HPrime => format!("majorant_h_prime_delta={delta}"),
                    };
                    emit(&name, avg.value, avg.bound)?;
                }
            }
        }
    }
    Ok(())
}

fn bound_calc(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let preset = config.preset()?;
    for &side in &config.l_list {
        let structure = DependenceStructure::new(
            config.d,
            side,
            preset.k,
            preset.gamma,
            preset.budget(config.d, side),
            true,
        )?;
        let scale = config.lambda_scale * (side as f64).powi(-(config.d as i32));
        let lambda = SpdMatrix::scaled_identity(config.n_dim, scale)?;
        let r = bound_report(&structure, &lambda, &config.policy)?;
        let b = &r.bound;
        sink.push(vec![
            side.to_string(),
            f(b.eps),
            r.choice.eps_clamped.to_string(),
            b.ell.to_string(),
            f(b.eps_term),
            f(b.condition_lhs),
            f(b.condition_rhs),
            b.condition_satisfied.to_string(),
            f(b.r_lowlevel),
            f(b.r_alllevel),
            f(b.r_tail),
            f(b.total),
            f(variance_norm_bound(&structure, &config.policy)),
        ])?;
    }
    Ok(())
}

fn tails(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let preset = config.preset()?;
    for &side in &config.l_list {
        let samples = sample_x(config, side)?;
        let pool = samples.column(0);
        let cfg = PoolSumConfig {
            m: config.sum_terms,
            trials: config.n_samples,
            gamma0: preset.gamma,
            seed: rng::derive(config.master_seed, 0x7A11 + side as u64),
            r_points: 20,
        };
        for row in pool_sum_tails(&pool, &preset.name, &cfg)? {
            sink.push(vec![
                side.to_string(),
                row.kind,
                row.preset,
                f(row.r),
                f(row.empirical_tail),
                f(row.bound),
                row.valid_flag.to_string(),
                f(row.slack),
            ])?;
        }
    }
    Ok(())
}

/// ℓ = √L rounded to a power of two.
pub fn default_ell(side: usize) -> usize {
    let e = ((side as f64).log2() / 2.0).round() as u32;
    1usize << e
}

fn moderate(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let preset = config.preset()?;
    for &side in &config.l_list {
        let ell = config.ell.unwrap_or_else(|| default_ell(side));
        let structure = preset.structure(config.d, side)?;
        let grouping = moderate_grouping(&structure, ell)?;
        let prepared = preset.generator.prepare(&structure)?;
        let seed = rng::derive(config.master_seed, side as u64);
        let mc = monte_carlo(&prepared, config.n_samples, seed, true)?;
        let draws = mc.per_index.as_ref().expect("per-index sums requested");
        let mut emit = |q: &str, r: f64, value: f64, reference: f64, valid: bool| {
            sink.push(vec![
                side.to_string(),
                ell.to_string(),
                q.to_string(),
                f(r),
                f(value),
                f(reference),
                f(if reference != 0.0 {
                    value / reference
                } else {
                    f64::NAN
                }),
                valid.to_string(),
            ])
        };
        let mut err: f64 = 0.0;
        for s in draws {
            let total = s.total();
            let re = grouping.reassemble(s);
            for (a, b) in total.iter().zip(&re) {
                err = err.max((a - b).abs());
            }
        }
        emit("reassembly_error", 0.0, err, 1e-12, err <= 1e-12)?;
        emit(
            "partition",
            0.0,
            grouping.is_partition(draws[0].n_indices()) as u8 as f64,
            1.0,
            true,
        )?;
        emit(
            "supports_disjoint",
            0.0,
            grouping.supports_disjoint(&structure) as u8 as f64,
            1.0,
            true,
        )?;
        emit(
            "groups",
            0.0,
            grouping.groups.iter().filter(|g| !g.is_empty()).count() as f64,
            0.0,
            true,
        )?;
        let gt = concentration::gamma_tilde(structure.gamma);
        let big: Vec<f64> = draws.iter().map(|s| grouping.big_remainder(s)[0]).collect();
        let small: Vec<f64> = draws
            .iter()
            .map(|s| grouping.small_remainder(s)[0])
            .collect();
        let (pb, ps) = predicted_remainder_norms(&structure, ell);
        emit(
            "remainder_big_norm",
            0.0,
            stretched_norm(&big, gt)?.value,
            pb,
            true,
        )?;
        emit(
            "remainder_small_norm",
            0.0,
            stretched_norm(&small, gt)?.value,
            ps,
            true,
        )?;
        let x = mc.samples.column(0);
        let var = stats::variance(&x);
        let sd = var.sqrt();
        let centered: Vec<f64> = x.iter().map(|v| v - stats::mean(&x)).collect();
        let w1 = w1_values_gaussian(&centered, var)?;
        let b = orlicz_scale(&centered, structure.gamma)?.max(f64::MIN_POSITIVE);
        let tau = (w1 / b).min(0.5);
        let split = close_to_gaussian_split(
            &[SampleSet::scalar(centered.clone(), seed)?],
            &[SpdMatrix::new(1, vec![var])?],
            tau,
            b,
            structure.gamma,
        )?;
        let r_grid: Vec<f64> = (1..=10).map(|i| 0.5 * sd * i as f64).collect();
        for row in moderate_tail_rows(
            &mc.samples,
            &split,
            &preset.name,
            &r_grid,
            rng::derive(seed, 3),
        )? {
            emit(
                &format!("tail_{}", row.kind),
                row.r,
                row.empirical_tail,
                row.bound + row.slack,
                row.valid_flag,
            )?;
        }
    }
    Ok(())
}

fn oracle(config: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let preset = config.preset()?;
    for &side in &config.l_list {
        let structure = preset.structure(config.d, side)?;
        let law = brute_force_law(&preset.generator, &structure)?;
        let prepared = preset.generator.prepare(&structure)?;
        let mc = monte_carlo(
            &prepared,
            config.n_samples,
            rng::derive(config.master_seed, side as u64),
            false,
        )?;
        let emp = DiscreteLaw::empirical(&mc.samples)?;
        let (w1, tv) = (w1_discrete_discrete(&emp, &law)?, tv_discrete(&emp, &law)?);
        let var = stats::variance(mc.samples.values()).max(1e-300);
        let closed = w1_values_gaussian(mc.samples.values(), var)?;
        let adaptive = w1_discrete_vs_gaussian(&emp, var)?;
        sink.push(vec![
            side.to_string(),
            mc.samples.n().to_string(),
            law.atoms().len().to_string(),
            f(w1),
            f(tv),
            f(closed),
            f(adaptive),
            f((closed - adaptive).abs()),
        ])?;
    }
    Ok(())
}

/// Least-squares fit of log₂ normalized_w1 on log₂ L.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub used: usize,
    pub dropped: usize,
}

/// Fit over (L, distance, floor) triples, dropping nonpositive distances
/// and rows below twice the floor.
pub fn fit_rate_points(rows: &[(f64, f64, f64)]) -> Result<RateFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut dropped = 0;
    for &(l, w, floor) in rows {
        if !(w > 0.0) {
            log::warn!("L = {l}: nonpositive distance excluded");
            dropped += 1;
        } else if w < 2.0 * floor {
            log::warn!("L = {l}: distance below twice the Monte Carlo floor excluded");
            dropped += 1;
        } else {
            x.push(l.log2());
            y.push(w.log2());
        }
    }
    if x.len() < 3 {
        return invalid(format!("need ≥ 3 usable rows, have {}", x.len()));
    }
    let (slope, intercept, r2) = stats::linear_fit(&x, &y);
    Ok(RateFit {
        slope,
        intercept,
        r2,
        used: x.len(),
        dropped,
    })
}

/// Fit on a clt-rate table.
pub fn fit_rate(table: &ResultTable) -> Result<RateFit> {
    let l = table.column_f64("L")?;
    let w = table.column_f64("normalized_w1")?;
    let floor = table
        .column_f64("mc_floor")
        .unwrap_or_else(|_| vec![0.0; l.len()]);
    let rows: Vec<(f64, f64, f64)> = l
        .into_iter()
        .zip(w)
        .zip(floor)
        .map(|((a, b), c)| (a, b, if c.is_nan() { 0.0 } else { c }))
        .collect();
    fit_rate_points(&rows)
}

/// Decreasing sequence up to at most one inversion no larger than twice
/// the corresponding floor.
pub fn monotone_decreasing(values: &[f64], floors: &[f64]) -> bool {
    let mut inversions = 0;
    for i in 1..values.len() {
        if values[i] > values[i - 1] {
            inversions += 1;
            if inversions > 1 || values[i] - values[i - 1] > 2.0 * floors[i].max(floors[i - 1]) {
                return false;
            }
        }
    }
    true
}

/// Run manifest written next to the CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub crate_version: String,
    pub schema_version: u32,
    pub schema_hash: String,
    pub threads: usize,
    pub rows: usize,
    pub wallclock_seconds: f64,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Runs the experiment and writes the manifest beside the output CSV.
pub fn run_with_manifest(config: &ExperimentConfig) -> Result<(ResultTable, Manifest)> {
    let start = Instant::now();
    let table = run_experiment(config)?;
    let manifest = Manifest {
        config: config.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        schema_hash: config.experiment.schema_hash(),
        threads: rayon::current_num_threads(),
        rows: table.rows.len(),
        wallclock_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(p) = &config.output_path {
        write_manifest(&p.with_extension("manifest.json"), &manifest)?;
    }
    Ok((table, manifest))
}
