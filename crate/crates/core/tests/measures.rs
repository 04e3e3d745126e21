use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use nlpme_core::kernels::{make_gaussian, EvenKernel};
use nlpme_core::measures::{
    entropy, h1_seminorm_sq, l2_norm_sq, mollify, quantiles_from_density, second_moment,
    wasserstein1_1d, wasserstein2_1d, GridDensity, GridShape, ParticleMeasure,
};
use nlpme_core::reference::BarenblattProfile;
use nlpme_core::Error;
use proptest::prelude::*;

fn pm(x: &[f64]) -> ParticleMeasure {
    ParticleMeasure::new_1d(x.to_vec()).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(x: &[f64], y: &[f64], cost: impl Fn(f64) -> f64) -> f64 {
    permutations(x.len())
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| cost(x[i] - y[j]))
                .sum::<f64>()
                / x.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn uniform_midpoint_quantiles() {
    let u = GridDensity::uniform(GridShape::new(0.0, 1.0, 101).unwrap(), 0.0, 1.0).unwrap();
    let q2 = quantiles_from_density(&u, 2).unwrap();
    for (a, b) in q2.coords().iter().zip([0.25, 0.75]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    let q4 = quantiles_from_density(&u, 4).unwrap();
    for (a, b) in q4.coords().iter().zip([0.125, 0.375, 0.625, 0.875]) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    let zero = GridDensity::new(GridShape::new(0.0, 1.0, 11).unwrap(), vec![0.0; 11]).unwrap();
    assert!(matches!(
        quantiles_from_density(&zero, 4),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn barenblatt_quantiles_are_close_in_wasserstein() {
    let b = BarenblattProfile::new(1.0).unwrap();
    let r = b.half_width(0.0).unwrap();
    let shape = GridShape::new(-3.0, 3.0, 6001).unwrap();
    let rho0 = b.grid(0.0, shape).unwrap();
    let n = 100;
    let mu = quantiles_from_density(&rho0, n).unwrap();
    // independent inverse CDF: cumulative Simpson of the closed form plus bisection
    let cdf = |x: f64| {
        let a = -r;
        if x <= a {
            return 0.0;
        }
        let m = 400;
        let h = (x - a) / m as f64;
        let f = |y: f64| b.value(0.0, y).unwrap();
        let mut s = f(a) + f(x);
        for k in 1..m {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let inv = |s: f64| {
        let (mut lo, mut hi) = (-r, r);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let per_cell = 20;
    let mut d2 = 0.0;
    for i in 0..n {
        for k in 0..per_cell {
            let s = (i as f64 + (k as f64 + 0.5) / per_cell as f64) / n as f64;
            d2 += (inv(s) - mu.coords()[i]).powi(2);
        }
    }
    d2 /= (n * per_cell) as f64;
    assert!(d2 <= 1e-3, "d_W^2 = {d2}");
    assert!(mu.coords().windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn mollification_preserves_mass_and_symmetry() {
    let u = GridDensity::uniform(GridShape::new(0.0, 1.0, 1001).unwrap(), 0.0, 1.0).unwrap();
    let mu = quantiles_from_density(&u, 100).unwrap();
    let v = make_gaussian(0.1, 1).unwrap();
    let shape = GridShape::with_spacing(-1.0, 2.0, 0.01).unwrap();
    let rho = mollify(&mu, &v, shape).unwrap();
    assert!((0.999..=1.001).contains(&rho.mass()), "mass {}", rho.mass());

    let one = mollify(&pm(&[0.0]), &v, shape).unwrap();
    for (k, val) in one.values().iter().enumerate() {
        assert_abs_diff_eq!(*val, v.eval1(shape.x(k)), epsilon = 1e-14);
    }

    let sym_shape = GridShape::new(-2.0, 2.0, 401).unwrap();
    let pair = mollify(&pm(&[-1.0, 1.0]), &v, sym_shape).unwrap();
    let vals = pair.values();
    for k in 0..vals.len() {
        assert_abs_diff_eq!(vals[k], vals[vals.len() - 1 - k], epsilon = 1e-13);
    }

    match mollify(&pm(&[-5.0, 0.0, 3.0]), &v, sym_shape) {
        Err(Error::Coverage { min, max, .. }) => {
            assert_eq!(min, -5.0);
            assert_eq!(max, 3.0);
        }
        other => panic!("expected coverage error, got {other:?}"),
    }
}

#[test]
fn wasserstein_trivial_cases() {
    let a = pm(&[0.3, -1.0, 2.0]);
    assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
    assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
    assert_eq!(wasserstein2_1d(&pm(&[0.0]), &pm(&[1.0])).unwrap(), 1.0);
    let shifted = a.translated(&[0.7]);
    assert_abs_diff_eq!(wasserstein1_1d(&a, &shifted).unwrap(), 0.7, epsilon = 1e-14);
    let planar = ParticleMeasure::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert!(matches!(
        wasserstein2_1d(&planar, &planar),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn unequal_counts_use_quantile_merge() {
    // δ-measure with two atoms vs three atoms: quantile functions on (0,1)
    let a = pm(&[0.0, 1.0]);
    let b = pm(&[0.0, 0.5, 1.0]);
    // pieces: (0,1/3): 0 vs 0; (1/3,1/2): 0 vs .5; (1/2,2/3): 1 vs .5; (2/3,1): 1 vs 1
    let exact = (1.0 / 6.0) * 0.25 * 2.0;
    assert_abs_diff_eq!(wasserstein2_1d(&a, &b).unwrap(), exact, epsilon = 1e-14);
}

#[test]
fn second_moment_examples() {
    assert_eq!(second_moment(&pm(&[0.0, 0.0, 0.0])), 0.0);
    assert_eq!(second_moment(&pm(&[-1.0, 1.0])), 1.0);
    let u = GridDensity::uniform(GridShape::new(0.0, 1.0, 2001).unwrap(), 0.0, 1.0).unwrap();
    let mu = quantiles_from_density(&u, 1000).unwrap();
    assert_abs_diff_eq!(second_moment(&mu), 1.0 / 3.0, epsilon = 2e-3);
}

#[test]
fn entropy_examples() {
    let u1 = GridDensity::uniform(GridShape::new(0.0, 1.0, 101).unwrap(), 0.0, 1.0).unwrap();
    assert_abs_diff_eq!(entropy(&u1), 0.0, epsilon = 1e-14);
    let u2 = GridDensity::from_fn(GridShape::new(0.0, 2.0, 201).unwrap(), |_| 0.5).unwrap();
    assert_abs_diff_eq!(entropy(&u2), -(2f64.ln()), epsilon = 1e-6);
    let g = GridDensity::from_fn(GridShape::with_spacing(-8.0, 8.0, 0.01).unwrap(), |x| {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    })
    .unwrap();
    assert_abs_diff_eq!(
        entropy(&g),
        -0.5 * (2.0 * PI * std::f64::consts::E).ln(),
        epsilon = 1e-4
    );
    assert_abs_diff_eq!(entropy(&g), -1.418_938_5, epsilon = 1e-4);
}

#[test]
fn h1_seminorm_examples() {
    let c = GridDensity::from_fn(GridShape::new(0.0, 1.0, 50).unwrap(), |_| 1.0).unwrap();
    assert_eq!(h1_seminorm_sq(&c), 0.0);
    let sin = |m: usize| {
        let s = GridShape::new(0.0, 2.0 * PI, m + 1).unwrap();
        // GridDensity requires nonnegative values; shift by a constant leaves the seminorm unchanged
        h1_seminorm_sq(&GridDensity::from_fn(s, |x| 1.0 + x.sin()).unwrap())
    };
    let h1 = sin(1000);
    assert_abs_diff_eq!(h1, PI, epsilon = 1e-3);
    let (c1, c2, c3) = (sin(250), sin(500), sin(1000));
    let d1 = (c2 - c1).abs();
    let d2 = (c3 - c2).abs();
    assert!(d2 <= d1 / 4.0 * 1.05 && d2 <= d1, "changes {d1} then {d2}");
}

#[test]
fn l2_norm_examples() {
    let z = GridDensity::new(GridShape::new(0.0, 1.0, 11).unwrap(), vec![0.0; 11]).unwrap();
    assert_eq!(l2_norm_sq(&z), 0.0);
    let u = GridDensity::uniform(GridShape::new(0.0, 1.0, 101).unwrap(), 0.0, 1.0).unwrap();
    assert_abs_diff_eq!(l2_norm_sq(&u), 1.0, epsilon = 1e-12);
    let g = GridDensity::from_fn(GridShape::with_spacing(-8.0, 8.0, 0.01).unwrap(), |x| {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    })
    .unwrap();
    assert_abs_diff_eq!(l2_norm_sq(&g), 0.282_094_8, epsilon = 1e-6);
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn w2_matches_permutation_oracle(x in prop::collection::vec(-3.0f64..3.0, 4), y in prop::collection::vec(-3.0f64..3.0, 4)) {
        let d = wasserstein2_1d(&pm(&x), &pm(&y)).unwrap();
        let oracle = brute_force(&x, &y, |d| d * d);
        prop_assert!((d - oracle).abs() <= 1e-12 * (1.0 + oracle));
    }

    #[test]
    fn w1_matches_permutation_oracle(x in prop::collection::vec(-3.0f64..3.0, 3), y in prop::collection::vec(-3.0f64..3.0, 3)) {
        let d = wasserstein1_1d(&pm(&x), &pm(&y)).unwrap();
        let oracle = brute_force(&x, &y, f64::abs);
        prop_assert!((d - oracle).abs() <= 1e-12 * (1.0 + oracle));
    }

    #[test]
    fn w2_triangle_and_moment_inequalities(
        x in prop::collection::vec(-3.0f64..3.0, 1..12),
        y in prop::collection::vec(-3.0f64..3.0, 1..12),
        z in prop::collection::vec(-3.0f64..3.0, 1..12),
    ) {
        let (a, b, c) = (pm(&x), pm(&y), pm(&z));
        let d = |p: &ParticleMeasure, q: &ParticleMeasure| wasserstein2_1d(p, q).unwrap().sqrt();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12);
        // d_W(μ, δ_0)^2 = m2(μ) and m2(μ) <= 2 m2(ν) + 2 d_W(μ,ν)^2
        prop_assert!((wasserstein2_1d(&a, &pm(&[0.0])).unwrap() - second_moment(&a)).abs() <= 1e-12);
        prop_assert!(second_moment(&a) <= 2.0 * second_moment(&b) + 2.0 * d(&a, &b).powi(2) + 1e-12);
        prop_assert!(wasserstein1_1d(&a, &b).unwrap() <= d(&a, &b) + 1e-12);
    }

    #[test]
    fn constructor_sorts(x in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        prop_assert_eq!(pm(&x).coords().to_vec(), sorted(x));
    }
}
