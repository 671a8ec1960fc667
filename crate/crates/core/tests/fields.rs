use proptest::prelude::*;

use mldep::distance::{tv_discrete, w1_discrete_discrete, DiscreteLaw};
use mldep::fields::{
    brute_force_law, local_average, monte_carlo, multilevel_decompose, read_dump, realization,
    sample_field, synthetic_multilevel, write_dump, Decomposer, FieldModel, Generator, Geometry,
    Kernel, NoiseDist, NoiseLattice, Nonlinearity, PointwiseMap, Preset, SyntheticSpec, XiWeight,
    PRESETS,
};
use mldep::multilevel::{DependenceGeometry, DependenceStructure};
use mldep::{rng, stats};

fn torus(d: usize, side: usize) -> DependenceStructure {
    DependenceStructure::periodic(d, side, 2.0).unwrap()
}

fn corner_tanh() -> FieldModel {
    FieldModel {
        kernel: Kernel::CornerAverage,
        map: PointwiseMap::Tanh,
        xi: XiWeight::Constant,
    }
}

#[test]
fn noise_is_reproducible_and_standardized() {
    let g = Geometry::new(1, 4096).unwrap();
    for dist in [
        NoiseDist::Rademacher,
        NoiseDist::Uniform,
        NoiseDist::CenteredExponential,
        NoiseDist::Laplace,
        NoiseDist::Gaussian,
    ] {
        let a = NoiseLattice::new(g, 16, dist, 9);
        assert_eq!(a, NoiseLattice::new(g, 16, dist, 9));
        assert_ne!(a.values(), NoiseLattice::new(g, 16, dist, 10).values());
        let n = a.values().len() as f64;
        let m = stats::mean(a.values());
        let v = stats::variance(a.values());
        assert!(m.abs() < 5.0 * (v / n).sqrt(), "{dist}: mean {m}");
        assert!((v - 1.0).abs() < 0.05, "{dist}: variance {v}");
        assert_eq!(dist.name().parse::<NoiseDist>().unwrap(), dist);
    }
    assert!("cauchy".parse::<NoiseDist>().is_err());
}

#[test]
fn point_identity_field_is_noise() {
    let g = Geometry::new(2, 8).unwrap();
    let z = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 1);
    assert_eq!(sample_field(&FieldModel::identity(), &z), z.values());
}

#[test]
fn far_cells_read_disjoint_noise() {
    for (d, side) in [(1, 16), (2, 8), (3, 4)] {
        let g = Geometry::new(d, side).unwrap();
        let m = corner_tanh();
        for i in 0..g.cells() {
            for j in 0..g.cells() {
                if g.periodic_distance(i, j) > 1 {
                    let a = m.noise_cells(&g, i);
                    assert!(m.noise_cells(&g, j).iter().all(|c| !a.contains(c)));
                }
            }
        }
    }
}

#[test]
fn far_cells_uncorrelated() {
    let g = Geometry::new(1, 8).unwrap();
    let n = 100_000;
    let mut a0 = Vec::with_capacity(n);
    let mut a3 = Vec::with_capacity(n);
    let mut a1 = Vec::with_capacity(n);
    for k in 0..n as u64 {
        let mut r = rng::stream(77, k);
        let z = NoiseLattice::from_rng(g, 1, NoiseDist::Gaussian, 77, &mut r);
        let a = sample_field(&corner_tanh(), &z);
        a0.push(a[0]);
        a1.push(a[1]);
        a3.push(a[3]);
    }
    assert!(stats::correlation(&a0, &a3).abs() <= 4.0 / (n as f64).sqrt());
    // neighbours share noise
    assert!(stats::correlation(&a0, &a1) > 0.2);
}

#[test]
fn local_average_examples() {
    let g = Geometry::new(1, 16).unwrap();
    let z = NoiseLattice::new(g, 1, NoiseDist::Uniform, 3);
    let mean = stats::mean(z.values());
    for v in local_average(z.values(), g, 16).unwrap() {
        assert!((v - mean).abs() < 1e-14);
    }
    let c = vec![-0.75; 16];
    assert!(local_average(&c, g, 3)
        .unwrap()
        .iter()
        .all(|v| (v + 0.75).abs() < 1e-15));
    assert!(local_average(&c, g, 0).is_err());
    // r = 1 window {x−1, x}
    let ramp: Vec<f64> = (0..16).map(|i| i as f64).collect();
    let v = local_average(&ramp, g, 1).unwrap();
    assert_eq!(v[5], 4.5);
    assert_eq!(v[0], 7.5);
}

#[test]
fn telescoping_reconstructs_top_average() {
    for (d, side) in [(1, 32), (2, 16), (1, 24)] {
        let g = Geometry::new(d, side).unwrap();
        let a = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 5)
            .values()
            .to_vec();
        let top = (side as f64).log2().floor() as u32;
        let mut acc = local_average(&a, g, 1).unwrap();
        for m in 0..top {
            let hi = local_average(&a, g, 1 << (m + 1)).unwrap();
            let lo = local_average(&a, g, 1 << m).unwrap();
            for (s, (h, l)) in acc.iter_mut().zip(hi.iter().zip(&lo)) {
                *s += h - l;
            }
        }
        let want = local_average(&a, g, 1 << top).unwrap();
        for (x, y) in acc.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn decomposition_of_constant_field() {
    let s = torus(1, 16);
    let dec = Decomposer::new(XiWeight::Constant, &s).unwrap();
    let x = dec.decompose(&[2.0; 16]).unwrap();
    assert!((x.total()[0] - 2.0).abs() < 1e-14);
    for i in 0..s.len() {
        if s.level_of(i) > 0 {
            assert!(x.value(i)[0].abs() < 1e-15);
        }
    }
}

#[test]
fn decomposition_reconstructs_direct_sum() {
    for (d, side, xi) in [
        (1, 16, XiWeight::Constant),
        (1, 40, XiWeight::Cosine { amplitude: 0.4 }),
        (2, 16, XiWeight::Cosine { amplitude: 0.7 }),
        (3, 4, XiWeight::Constant),
    ] {
        let s = torus(d, side);
        let g = Geometry::new(d, side).unwrap();
        let model = FieldModel {
            xi,
            ..corner_tanh()
        };
        for seed in 0..5 {
            let z = NoiseLattice::new(g, 1, NoiseDist::Laplace, seed);
            let x = multilevel_decompose(&model, &z, &s).unwrap();
            let dec = Decomposer::new(xi, &s).unwrap();
            let direct = dec.direct(&sample_field(&model, &z));
            assert!((x.total()[0] - direct).abs() < 1e-12, "d = {d}, L = {side}");
        }
    }
    let z = NoiseLattice::new(Geometry::new(1, 8).unwrap(), 1, NoiseDist::Gaussian, 0);
    assert!(multilevel_decompose(&FieldModel::identity(), &z, &torus(1, 16)).is_err());
}

#[test]
fn decomposition_is_local() {
    let side = 256;
    let s = torus(1, side);
    let g = Geometry::new(1, side).unwrap();
    let model = corner_tanh();
    let base = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 21);
    let x = multilevel_decompose(&model, &base, &s).unwrap();
    for (m, y) in [(0usize, 0usize), (0, 100), (1, 36), (2, 200), (3, 128)] {
        let pos = s.level_offset(m) + y / (1 << m);
        let keep = s.box_cells_1d(m, y);
        for t in 0..3u64 {
            let other = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 1000 + t);
            let mut vals = other.values().to_vec();
            for &c in &keep {
                vals[c] = base.values()[c];
            }
            let z = NoiseLattice::from_values(g, 1, NoiseDist::Gaussian, vals).unwrap();
            let x2 = multilevel_decompose(&model, &z, &s).unwrap();
            assert!(
                (x.value(pos)[0] - x2.value(pos)[0]).abs() < 1e-12,
                "m = {m}, y = {y}"
            );
        }
    }
}

#[test]
fn synthetic_is_local() {
    let side = 256;
    let s = torus(1, side);
    let g = Geometry::new(1, side).unwrap();
    let spec =
        SyntheticSpec::new(vec![1.0], Nonlinearity::Cube, NoiseDist::Uniform, 2, 1.0).unwrap();
    let base = NoiseLattice::new(g, 2, NoiseDist::Uniform, 4);
    let x = synthetic_multilevel(&spec, &s, &base).unwrap();
    for (m, y) in [(0usize, 17usize), (1, 64), (2, 100)] {
        let pos = s.level_offset(m) + y / (1 << m);
        let keep = s.box_cells_1d(m, y);
        let other = NoiseLattice::new(g, 2, NoiseDist::Uniform, 99);
        let mut vals = other.values().to_vec();
        for c in 0..2 {
            for &k in &keep {
                vals[c * side + k] = base.values()[c * side + k];
            }
        }
        let z = NoiseLattice::from_values(g, 2, NoiseDist::Uniform, vals).unwrap();
        let x2 = synthetic_multilevel(&spec, &s, &z).unwrap();
        for (a, b) in x.value(pos).iter().zip(x2.value(pos)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn brute_force_tiny_identity() {
    let s = torus(1, 2);
    let spec = SyntheticSpec::new(
        vec![1.0, 0.0, 0.0],
        Nonlinearity::Identity,
        NoiseDist::Rademacher,
        1,
        1.0,
    )
    .unwrap();
    let law = brute_force_law(&Generator::Synthetic(spec), &s).unwrap();
    // X = (ζ₀ + ζ₁)/√2
    let r2 = 2f64.sqrt();
    let want = DiscreteLaw::scalar(vec![(-r2, 0.25), (0.0, 0.5), (r2, 0.25)]).unwrap();
    assert!(law.atoms().len() <= 4);
    assert!(w1_discrete_discrete(&law, &want).unwrap() < 1e-12);
    for ((x, p), (y, q)) in law
        .sorted_scalar()
        .unwrap()
        .iter()
        .zip(want.sorted_scalar().unwrap())
    {
        assert!((x - y).abs() < 1e-12 && (p - q).abs() < 1e-15);
    }
    assert_eq!(tv_discrete(&law, &law).unwrap(), 0.0);
}

#[test]
fn brute_force_symmetry_and_centering() {
    let s = torus(1, 8);
    for g in [
        Nonlinearity::Cube,
        Nonlinearity::SignedSqrt,
        Nonlinearity::Identity,
    ] {
        let spec = SyntheticSpec::new(vec![1.0, 0.5], g, NoiseDist::Rademacher, 1, 1.0).unwrap();
        let law = brute_force_law(&Generator::Synthetic(spec), &s).unwrap();
        assert!(law.mean()[0].abs() < 1e-15);
        let atoms = law.sorted_scalar().unwrap();
        let k = atoms.len();
        for i in 0..k {
            let (x, p) = atoms[i];
            let (y, q) = atoms[k - 1 - i];
            assert!((x + y).abs() < 1e-12 && (p - q).abs() < 1e-15);
        }
    }
}

#[test]
fn brute_force_errors() {
    let spec = SyntheticSpec::new(
        vec![1.0],
        Nonlinearity::Identity,
        NoiseDist::Uniform,
        1,
        1.0,
    )
    .unwrap();
    assert!(brute_force_law(&Generator::Synthetic(spec.clone()), &torus(1, 4)).is_err());
    let rad = SyntheticSpec {
        noise: NoiseDist::Rademacher,
        ..spec
    };
    assert!(brute_force_law(&Generator::Synthetic(rad), &torus(1, 32)).is_err());
}

#[test]
fn level_zero_gaussian_variant_is_linear() {
    let side = 64;
    let s = torus(1, side);
    let g = Geometry::new(1, side).unwrap();
    let mut w = vec![1.0];
    w.extend(std::iter::repeat(0.0).take(10));
    let spec = SyntheticSpec::new(w, Nonlinearity::Identity, NoiseDist::Gaussian, 1, 1.0).unwrap();
    let a = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 1);
    let b = NoiseLattice::new(g, 1, NoiseDist::Gaussian, 2);
    let sum: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| 2.0 * x - y)
        .collect();
    let c = NoiseLattice::from_values(g, 1, NoiseDist::Gaussian, sum).unwrap();
    let xa = synthetic_multilevel(&spec, &s, &a).unwrap().total()[0];
    let xb = synthetic_multilevel(&spec, &s, &b).unwrap().total()[0];
    let xc = synthetic_multilevel(&spec, &s, &c).unwrap().total()[0];
    assert!((xc - (2.0 * xa - xb)).abs() < 1e-13);
    // X = Σ ζ · width/(√width · L) with the window of 2·12 + 1 cells
    let direct = stats::sum(a.values().iter().copied()) * 25f64.sqrt() / side as f64;
    assert!((xa - direct).abs() < 1e-12);
}

#[test]
fn cube_preset_is_non_gaussian() {
    let p = Preset::named("cube", 1).unwrap();
    let s = p.structure(1, 64).unwrap();
    let g = p.generator.prepare(&s).unwrap();
    let mc = monte_carlo(&g, 100_000, 8, false).unwrap();
    let (k, se) = stats::excess_kurtosis(mc.samples.values());
    assert!(k.abs() > 3.0 * se, "excess kurtosis {k} ± {se}");
}

#[test]
fn monte_carlo_contract() {
    let p = Preset::named("signed-sqrt-uniform", 2).unwrap();
    let s = p.structure(1, 32).unwrap();
    let g = p.generator.prepare(&s).unwrap();
    let one = monte_carlo(&g, 1, 42, true).unwrap();
    let direct = realization(&g, 42, 0).unwrap();
    assert_eq!(one.samples.row(0), &direct.total()[..]);
    assert_eq!(one.per_index.unwrap()[0], direct);

    let big = monte_carlo(&g, 20_000, 42, false).unwrap();
    assert_eq!(big.samples.row(0), one.samples.row(0));
    assert_eq!(
        big.samples.row(777),
        &realization(&g, 42, 777).unwrap().total()[..]
    );
    for a in 0..2 {
        let col = big.samples.column(a);
        let sd = stats::variance(&col).sqrt();
        assert!(stats::mean(&col).abs() <= 4.0 * sd / (col.len() as f64).sqrt());
    }
    assert!(monte_carlo(&g, 0, 1, false).is_err());
}

#[test]
fn monte_carlo_independent_of_workers() {
    let p = Preset::named("field-twophase", 1).unwrap();
    let s = p.structure(2, 8).unwrap();
    let g = p.generator.prepare(&s).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| monte_carlo(&g, 500, 3, false).unwrap().samples)
    };
    assert_eq!(run(1).values(), run(3).values());
}

#[test]
fn presets_build() {
    for name in PRESETS {
        let p = Preset::named(name, 1).unwrap();
        let s = p.structure(1, 16).unwrap();
        let g = p.generator.prepare(&s).unwrap();
        assert_eq!(g.n_indices(), s.len());
        realization(&g, 1, 0).unwrap();
    }
    assert!(Preset::named("nope", 1).is_err());
    assert!(Preset::named("field-twophase", 2).is_err());
}

#[test]
fn dump_roundtrip() {
    let p = Preset::named("identity-gauss", 3).unwrap();
    let s = p.structure(1, 16).unwrap();
    let g = p.generator.prepare(&s).unwrap();
    let mc = monte_carlo(&g, 10, 5, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    write_dump(&path, 1, 16, &mc.samples).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 32 + 8 * 30);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
    let (h, back) = read_dump(&path).unwrap();
    assert_eq!((h.d, h.side, h.dim, h.n), (1, 16, 3, 10));
    assert_eq!(back.values(), mc.samples.values());
    std::fs::write(&path, &bytes[..40]).unwrap();
    assert!(read_dump(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_reconstructs(seed in 0u64..1000, side in 4usize..40) {
        let s = torus(1, side);
        let g = Geometry::new(1, side).unwrap();
        let z = NoiseLattice::new(g, 1, NoiseDist::Uniform, seed);
        let model = corner_tanh();
        let x = multilevel_decompose(&model, &z, &s).unwrap();
        let direct = Decomposer::new(model.xi, &s).unwrap().direct(&sample_field(&model, &z));
        prop_assert!((x.total()[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn local_average_preserves_mean(seed in 0u64..1000, r in 1usize..20) {
        let g = Geometry::new(2, 10).unwrap();
        let z = NoiseLattice::new(g, 1, NoiseDist::Gaussian, seed);
        let v = local_average(z.values(), g, r).unwrap();
        prop_assert!((stats::mean(&v) - stats::mean(z.values())).abs() < 1e-12);
    }
}
