use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use mldep::distance::{
    class_membership_check, mollify, restricted_distance, sliced_w1, sliced_w1_with_directions,
    soft_clip_family, unit_law, w1_discrete_vs_gaussian, w1_empirical_gaussian, w1_values_gaussian,
    DiscreteLaw, SampleSet, TestFunction,
};
use mldep::rng;
use mldep::{GaussianLaw, SpdMatrix};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// W1 between a fair ±1 coin and N(0, 1), from 30-digit quadrature.
const COIN_W1: f64 = 0.535_377_321_547_879_8;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

fn coins(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| if r.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

#[test]
fn mollify_examples() {
    let law = unit_law(1).unwrap();
    let lin = mollify(&TestFunction::linear(vec![1.0]), 0.3, &law).unwrap();
    for x in [-2.0, 0.0, 1.5] {
        assert!((lin.eval(&[x]) - (1.0f64 - 0.09).sqrt() * x).abs() < 1e-12);
    }
    let sq = TestFunction::new(1, "square", None, |x| x[0] * x[0]);
    let m = mollify(&sq, 0.5, &law).unwrap();
    for x in [-1.0, 0.0, 2.0] {
        assert!((m.eval(&[x]) - (0.75 * x * x + 0.25)).abs() < 1e-12);
    }
    let abs = TestFunction::new(1, "abs", Some(1.0), |x| x[0].abs());
    let m = mollify(&abs, 0.5, &law).unwrap();
    // 0.5·√(2/π)
    assert!((m.eval(&[0.0]) - 0.398_942_280_401_432_7).abs() < 1e-8);
    assert!(mollify(&abs, 1.0, &law).is_err());
    assert!(mollify(&abs, 0.0, &law).is_err());
}

#[test]
fn mollify_is_linear_and_fixes_constants() {
    let law = unit_law(2).unwrap();
    let fam = soft_clip_family(2);
    let c = mollify(&TestFunction::constant(2, 3.0), 0.4, &law).unwrap();
    let comb = TestFunction::combine(2.0, &fam[0], -0.5, &fam[1]).unwrap();
    let (m0, m1) = (
        mollify(&fam[0], 0.4, &law).unwrap(),
        mollify(&fam[1], 0.4, &law).unwrap(),
    );
    let mc = mollify(&comb, 0.4, &law).unwrap();
    for x in [[0.0, 0.0], [1.0, -0.5], [-2.0, 1.5]] {
        assert!((c.eval(&x) - 3.0).abs() < 1e-12);
        assert!((mc.eval(&x) - (2.0 * m0.eval(&x) - 0.5 * m1.eval(&x))).abs() < 1e-10);
    }
}

#[test]
fn membership_examples() {
    let law = unit_law(1).unwrap();
    let r_grid = [0.1, 0.5, 1.0];
    let x0: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.0], vec![2.0]];
    let lin =
        class_membership_check(&TestFunction::linear(vec![1.0]), &law, 2.0, &r_grid, &x0).unwrap();
    assert!(!lin.pass);
    assert!((lin.worst_ratio - 2.0).abs() < 1e-6);
    let half =
        class_membership_check(&TestFunction::linear(vec![0.5]), &law, 2.0, &r_grid, &x0).unwrap();
    assert!(half.pass);
    assert!((half.worst_ratio - 1.0).abs() < 1e-6);
    let c =
        class_membership_check(&TestFunction::constant(1, 2.0), &law, 2.0, &r_grid, &x0).unwrap();
    assert!(c.pass && c.worst_ratio == 0.0);
    assert!(class_membership_check(&TestFunction::constant(1, 2.0), &law, 2.0, &[], &x0).is_err());
}

#[test]
fn soft_clip_family_is_in_class() {
    for n in [1, 2] {
        let law = unit_law(n).unwrap();
        let x0: Vec<Vec<f64>> = [-1.5, 0.0, 1.0]
            .iter()
            .map(|&v| (0..n).map(|a| if a == 0 { v } else { 0.5 * v }).collect())
            .collect();
        for phi in soft_clip_family(n) {
            let rep = class_membership_check(&phi, &law, 2.0, &[0.05, 0.3, 1.0, 3.0], &x0).unwrap();
            assert!(rep.pass, "{}: {}", phi.label(), rep.worst_ratio);
        }
    }
}

#[test]
fn w1_discrete_examples() {
    let point = DiscreteLaw::scalar(vec![(0.0, 1.0)]).unwrap();
    assert!((w1_discrete_vs_gaussian(&point, 1.0).unwrap() - SQRT_2_OVER_PI).abs() < 1e-8);
    let coin = DiscreteLaw::scalar(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
    let v = w1_discrete_vs_gaussian(&coin, 1.0).unwrap();
    assert!((v - COIN_W1).abs() < 1e-8);
    let skew = DiscreteLaw::scalar(vec![(-1.0, 0.3), (0.5, 0.7)]).unwrap();
    let flip = DiscreteLaw::scalar(vec![(1.0, 0.3), (-0.5, 0.7)]).unwrap();
    assert!(
        (w1_discrete_vs_gaussian(&skew, 1.0).unwrap()
            - w1_discrete_vs_gaussian(&flip, 1.0).unwrap())
        .abs()
            < 1e-10
    );
    assert!(w1_discrete_vs_gaussian(&coin, 0.0).is_err());
}

#[test]
fn w1_empirical_examples() {
    assert!((w1_values_gaussian(&[0.0; 10], 1.0).unwrap() - SQRT_2_OVER_PI).abs() < 1e-6);
    let s = SampleSet::scalar(normals(1_000_000, 3), 3).unwrap();
    assert!(w1_empirical_gaussian(&s, 1.0).unwrap() <= 0.005);
    let c = SampleSet::scalar(coins(1_000_000, 4), 4).unwrap();
    let emp = DiscreteLaw::empirical(&c).unwrap();
    let a = w1_empirical_gaussian(&c, 1.0).unwrap();
    let b = w1_discrete_vs_gaussian(&emp, 1.0).unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    assert!((a - COIN_W1).abs() < 2e-3);
    assert!(w1_values_gaussian(&[0.0, 1.0], -1.0).is_err());
}

#[test]
fn sliced_examples() {
    let s = SampleSet::scalar(normals(1000, 5), 5).unwrap();
    let l1 = GaussianLaw::new(SpdMatrix::new(1, vec![1.3]).unwrap());
    let direct = w1_empirical_gaussian(&s, 1.3).unwrap();
    for k in [1, 7] {
        assert_eq!(sliced_w1(&s, &l1, k, 9).unwrap(), direct);
    }
    // samples from N_Λ in two dimensions
    let cov = [1.0, 0.5, 0.5, 2.0];
    let law = GaussianLaw::new(SpdMatrix::new(2, cov.to_vec()).unwrap());
    let z = normals(2_000_000, 6);
    let (l11, l21) = (1.0f64, 0.5);
    let l22 = (2.0f64 - 0.25).sqrt();
    let mut vals = Vec::with_capacity(z.len());
    for p in z.chunks(2) {
        vals.push(l11 * p[0]);
        vals.push(l21 * p[0] + l22 * p[1]);
    }
    let s2 = SampleSet::new(2, vals.clone(), 6).unwrap();
    assert!(sliced_w1(&s2, &law, 16, 7).unwrap() <= 0.01);
    assert!(sliced_w1(&s2, &law, 0, 7).is_err());

    // joint rotation with directions mapped through the rotation
    let th: f64 = 0.7;
    let (c, si) = (th.cos(), th.sin());
    let rot = |v: &[f64]| vec![c * v[0] - si * v[1], si * v[0] + c * v[1]];
    let small = SampleSet::new(2, vals[..20_000].to_vec(), 1).unwrap();
    let rotated: Vec<f64> = small.rows().flat_map(rot).collect();
    let rs = SampleSet::new(2, rotated, 1).unwrap();
    // R Λ Rᵀ
    let m = |i: usize, j: usize| {
        let r = [[c, -si], [si, c]];
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                acc += r[i][a] * cov[a * 2 + b] * r[j][b];
            }
        }
        acc
    };
    let rlaw =
        GaussianLaw::new(SpdMatrix::new(2, vec![m(0, 0), m(0, 1), m(1, 0), m(1, 1)]).unwrap());
    let dirs = mldep::distance::random_directions(2, 8, 11);
    let rdirs: Vec<Vec<f64>> = dirs.iter().map(|u| rot(u)).collect();
    let a = sliced_w1_with_directions(&small, &law, &dirs).unwrap();
    let b = sliced_w1_with_directions(&rs, &rlaw, &rdirs).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn restricted_distance_examples() {
    let law = unit_law(1).unwrap();
    let z = normals(1_000_000, 8);
    let s = SampleSet::scalar(z.clone(), 8).unwrap();
    assert!(
        restricted_distance(&s, &law, &[TestFunction::constant(1, 2.5)], 0.0)
            .unwrap()
            .abs()
            < 1e-12
    );
    let fam = soft_clip_family(1);
    let slack = 3.0 * 1.0 * (1.0f64 / 1e6).sqrt() * 5.0;
    assert!(restricted_distance(&s, &law, &fam, 0.0).unwrap().abs() <= slack);
    assert!(restricted_distance(&s, &law, &fam, 0.25).unwrap().abs() <= slack);
    let shifted = SampleSet::scalar(z.iter().map(|v| v + 0.5).collect(), 8).unwrap();
    let pm = [
        TestFunction::linear(vec![0.5]),
        TestFunction::linear(vec![-0.5]),
    ];
    assert!((restricted_distance(&shifted, &law, &pm, 0.0).unwrap() - 0.25).abs() < 0.01);
    assert!(restricted_distance(&s, &law, &[], 0.0).is_err());
}

#[test]
fn restricted_distance_monotone_and_below_w1() {
    let law = unit_law(1).unwrap();
    let c = SampleSet::scalar(coins(100_000, 12), 12).unwrap();
    let mut fam = soft_clip_family(1);
    let small = restricted_distance(&c, &law, &fam[..1], 0.0).unwrap();
    let mid = restricted_distance(&c, &law, &fam[..2], 0.0).unwrap();
    fam.push(TestFunction::new(1, "abs", Some(1.0), |x| x[0].abs()));
    fam.push(TestFunction::new(1, "-abs", Some(1.0), |x| -x[0].abs()));
    let all = restricted_distance(&c, &law, &fam, 0.0).unwrap();
    assert!(small <= mid && mid <= all);
    let w1 = w1_empirical_gaussian(&c, 1.0).unwrap();
    assert!(all <= w1, "{all} > {w1}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_permutation_invariant_and_homogeneous(
        mut v in prop::collection::vec(-4.0f64..4.0, 2..60),
        s in 0.1f64..10.0,
        sigma in 0.2f64..3.0,
    ) {
        let a = w1_values_gaussian(&v, sigma * sigma).unwrap();
        v.reverse();
        let b = w1_values_gaussian(&v, sigma * sigma).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        let scaled: Vec<f64> = v.iter().map(|x| x * s).collect();
        let c = w1_values_gaussian(&scaled, (s * sigma).powi(2)).unwrap();
        prop_assert!((c - s * a).abs() <= 1e-8 * (1.0 + s * a));
    }

    #[test]
    fn discrete_law_probabilities_sum_to_one(v in prop::collection::vec(-3i32..3, 1..200)) {
        let s = SampleSet::scalar(v.iter().map(|&x| x as f64).collect(), 0).unwrap();
        let law = DiscreteLaw::empirical(&s).unwrap();
        let tot: f64 = law.atoms().iter().map(|a| a.1).sum();
        prop_assert!((tot - 1.0).abs() < 1e-12);
        prop_assert!(law.atoms().len() <= 6);
    }
}
