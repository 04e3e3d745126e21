use approx::assert_abs_diff_eq;
use nlpme_core::energy::{
    cross_excess_term, excess_l1_bound, excess_term, interaction_energy, interaction_force,
    DiffusionMatrix, RelativeEnergy, TestFunction,
};
use nlpme_core::kernels::{
    cross_convolve, make_gaussian, make_laplace, scale, self_convolve, weight_mollifier,
    CrossWeight, EvenKernel,
};
use nlpme_core::measures::{l2_norm_sq, mollify, GridShape, ParticleMeasure};
use nlpme_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pm(x: &[f64]) -> ParticleMeasure {
    ParticleMeasure::new_1d(x.to_vec()).unwrap()
}

fn random_config(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> ParticleMeasure {
    pm(&(0..n)
        .map(|_| rng.random_range(-spread..spread))
        .collect::<Vec<_>>())
}

/// Trapezoid on a uniform grid, written out independently of the crate.
fn trap(vals: &[f64], dx: f64) -> f64 {
    dx * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[vals.len() - 1]))
}

#[test]
fn energy_of_one_and_two_atoms() {
    let w = self_convolve(&scale(&make_gaussian(1.0, 1).unwrap(), 0.2).unwrap()).unwrap();
    assert_abs_diff_eq!(
        interaction_energy(&pm(&[0.4]), &w),
        w.eval1(0.0) / 2.0,
        epsilon = 1e-15
    );
    let r = 0.13;
    assert_abs_diff_eq!(
        interaction_energy(&pm(&[0.0, r]), &w),
        (w.eval1(0.0) + w.eval1(r)) / 4.0,
        epsilon = 1e-15
    );
}

#[test]
fn energy_is_half_squared_l2_norm_of_mollified_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let eps = 0.2;
    let v = scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap();
    let w = self_convolve(&v).unwrap();
    let mu = random_config(&mut rng, 50, 1.0);
    let shape = GridShape::with_spacing(-3.0, 3.0, eps / 50.0).unwrap();
    let rho = mollify(&mu, &v, shape).unwrap();
    assert_abs_diff_eq!(
        interaction_energy(&mu, &w),
        0.5 * l2_norm_sq(&rho),
        epsilon = 1e-4
    );
}

#[test]
fn forces_single_pair_and_finite_differences() {
    let w = self_convolve(&make_gaussian(0.3, 1).unwrap()).unwrap();
    assert_eq!(interaction_force(&pm(&[0.7]), &w), vec![0.0]);
    let f = interaction_force(&pm(&[-0.25, 0.25]), &w);
    assert_abs_diff_eq!(f[0], -f[1], epsilon = 1e-15);
    assert!(f[0] < 0.0, "repulsive: left particle pushed left");

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for fam in 0..2 {
        let w = if fam == 0 {
            self_convolve(&make_gaussian(0.3, 1).unwrap()).unwrap()
        } else {
            self_convolve(&make_laplace(0.3, 1).unwrap()).unwrap()
        };
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu = pm(&x);
        let n = mu.len() as f64;
        let f = interaction_force(&mu, &w);
        let h = 1e-6;
        for i in 0..5 {
            let mut xp = mu.coords().to_vec();
            let mut xm = xp.clone();
            xp[i] += h;
            xm[i] -= h;
            let ep = n * interaction_energy(&ParticleMeasure::new(1, xp).unwrap(), &w);
            let em = n * interaction_energy(&ParticleMeasure::new(1, xm).unwrap(), &w);
            assert_abs_diff_eq!(f[i], -(ep - em) / (2.0 * h), epsilon = 1e-5);
        }
        assert_abs_diff_eq!(f.iter().sum::<f64>(), 0.0, epsilon = 1e-13);
    }
}

#[test]
fn matrix_assumption_is_enforced() {
    let w = self_convolve(&make_gaussian(0.2, 1).unwrap()).unwrap();
    let e = RelativeEnergy::new(
        w.clone(),
        w.clone(),
        w.clone(),
        w.clone(),
        DiffusionMatrix {
            a11: 1.0,
            a12: 1.0,
            a21: 1.0,
            a22: 1.0,
        },
    )
    .unwrap_err();
    assert!(matches!(e, Error::Assumption(_)));
    assert!(e.to_string().contains("min{A11,A22} > (A12+A21)/2"));
}

#[test]
fn decoupled_relative_energy_is_weighted_sum() {
    let w = self_convolve(&make_gaussian(0.2, 1).unwrap()).unwrap();
    let w2 = self_convolve(&make_laplace(0.3, 1).unwrap()).unwrap();
    let re = RelativeEnergy::new(
        w.clone(),
        w2.clone(),
        w.clone(),
        w2.clone(),
        DiffusionMatrix::new(2.0, 0.0, 0.0, 0.5).unwrap(),
    )
    .unwrap();
    let a = pm(&[-0.3, 0.1, 0.5]);
    let b = pm(&[0.0, 0.2]);
    let v = re.value((&a, &b), (&b, &a)).unwrap();
    assert_eq!(v.k, 0.0);
    assert_abs_diff_eq!(
        v.h,
        2.0 * interaction_energy(&a, &w) + 0.5 * interaction_energy(&b, &w2),
        epsilon = 1e-15
    );
}

#[test]
fn relative_energy_double_sums_match_grid_quadrature() {
    let eps = 0.3;
    let v1 = make_gaussian(1.0, 1).unwrap();
    let v2 = make_gaussian(0.5, 1).unwrap();
    let (v1e, v2e) = (scale(&v1, eps).unwrap(), scale(&v2, eps).unwrap());
    let u = CrossWeight::Dirac;
    let re = RelativeEnergy::new(
        self_convolve(&v1e).unwrap(),
        self_convolve(&v2e).unwrap(),
        cross_convolve(&v1, &u, &v2, eps).unwrap(),
        cross_convolve(&v2, &u, &v1, eps).unwrap(),
        DiffusionMatrix::new(1.0, 0.3, 0.2, 0.8).unwrap(),
    )
    .unwrap();
    let mu = (pm(&[-0.4, 0.0, 0.3]), pm(&[-0.1, 0.2, 0.6]));
    let nu = (pm(&[-0.2, 0.1, 0.5]), pm(&[-0.5, 0.05, 0.4]));
    let shape = GridShape::with_spacing(-4.0, 4.0, 2e-3).unwrap();
    let g =
        |m: &ParticleMeasure, k: &dyn EvenKernel| mollify(m, k, shape).unwrap().values().to_vec();
    let dot = |a: &[f64], b: &[f64]| {
        trap(
            &a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>(),
            shape.dx(),
        )
    };
    let (a1, a2) = (g(&mu.0, &v1e), g(&mu.1, &v2e));
    let (b1, b2) = (g(&nu.0, &v1e), g(&nu.1, &v2e));
    let h = 0.5 * 1.0 * dot(&a1, &a1) + 0.5 * 0.8 * dot(&a2, &a2);
    // ∬ V1*V2 (x - y) dν2(y) dμ1(x) = ∫ (V1*μ1)(V2*ν2)
    let k = 0.3 * dot(&a1, &b2) + 0.2 * dot(&a2, &b1);
    let val = re.value((&mu.0, &mu.1), (&nu.0, &nu.1)).unwrap();
    assert_abs_diff_eq!(val.h, h, epsilon = 1e-4);
    assert_abs_diff_eq!(val.k, k, epsilon = 1e-4);
    assert_abs_diff_eq!(val.total, h + k, epsilon = 2e-4);
}

#[test]
fn one_atom_excess_field() {
    let eps = 0.1;
    let v = scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap();
    let width = 1.0;
    let phi = TestFunction::quadratic_window(0.0, width).unwrap();
    let shape = GridShape::with_spacing(-2.0, 2.0, eps / 20.0).unwrap();
    let z = excess_term(&pm(&[0.0]), &v, &phi, shape).unwrap();
    // near 0, φ = 1 - 2x^2/w^2, so z(x) = V(x)(φ'(0) - φ'(x)) = 4x V(x)/w^2
    let k = (0..shape.m)
        .position(|k| (shape.x(k) - eps).abs() < 1e-9)
        .unwrap();
    let expected = 4.0 * eps * v.eval1(eps) / (width * width);
    assert_abs_diff_eq!(z.values[k], expected, epsilon = 1e-12);
    for (k, zk) in z.values.iter().enumerate() {
        let x = shape.x(k);
        assert_abs_diff_eq!(
            *zk,
            v.eval1(x) * (phi.grad(0.0) - phi.grad(x)),
            epsilon = 1e-12
        );
    }
}

#[test]
fn excess_vanishes_where_test_function_is_flat() {
    let v = scale(&make_gaussian(1.0, 1).unwrap(), 0.1).unwrap();
    let phi = TestFunction::bump(0.0, 1.0).unwrap();
    let shape = GridShape::with_spacing(3.0, 8.0, 0.01).unwrap();
    let z = excess_term(&pm(&[5.0, 5.3, 5.9]), &v, &phi, shape).unwrap();
    assert!(z.values.iter().all(|x| x.abs() <= 1e-12));
    assert_eq!(z.l1, 0.0);
}

#[test]
fn excess_l1_bound_on_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..20 {
        let eps = [0.4, 0.2, 0.1, 0.05][trial % 4];
        let base = if trial % 2 == 0 {
            make_gaussian(1.0, 1).unwrap()
        } else {
            make_laplace(1.0, 1).unwrap()
        };
        let v = scale(&base, eps).unwrap();
        let mu = random_config(&mut rng, 40, 1.0);
        let phi =
            TestFunction::bump(rng.random_range(-0.5..0.5), rng.random_range(0.5..1.5)).unwrap();
        let shape =
            GridShape::with_spacing(-1.0 - 10.0 * eps - 2.0, 1.0 + 10.0 * eps + 2.0, eps / 40.0)
                .unwrap();
        let z = excess_term(&mu, &v, &phi, shape).unwrap();
        let bound = excess_l1_bound(&v, &phi);
        assert_abs_diff_eq!(
            bound,
            eps * phi.hess_sup() * base.first_abs_moment(),
            epsilon = 1e-14
        );
        assert!(z.l1 <= bound, "trial {trial}: {} > {bound}", z.l1);
    }
}

#[test]
fn cross_excess_with_dirac_weight_is_the_plain_excess() {
    let eps = 0.2;
    let v = make_gaussian(1.0, 1).unwrap();
    let p = weight_mollifier(&v, &CrossWeight::Dirac, eps).unwrap();
    let ve = scale(&v, eps).unwrap();
    let mu = pm(&[-0.5, -0.1, 0.2, 0.7]);
    let phi = TestFunction::bump(0.1, 1.2).unwrap();
    let shape = GridShape::with_spacing(-4.0, 4.0, 0.01).unwrap();
    let a = cross_excess_term(&mu, &p, &phi, shape).unwrap();
    let b = excess_term(&mu, &ve, &phi, shape).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-13);
    }
    let flat = TestFunction::bump(20.0, 1.0).unwrap();
    let z = cross_excess_term(&mu, &p, &flat, shape).unwrap();
    assert_eq!(z.l1, 0.0);
}

#[test]
fn cross_excess_bound_uses_the_combined_profile() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eps = 0.2;
    let v = make_gaussian(1.0, 1).unwrap();
    let p = weight_mollifier(&v, &CrossWeight::Laplace { ell: 0.5 }, eps).unwrap();
    for _ in 0..5 {
        let mu = random_config(&mut rng, 30, 1.0);
        let phi = TestFunction::quadratic_window(rng.random_range(-0.3..0.3), 1.0).unwrap();
        let shape = GridShape::with_spacing(-6.0, 6.0, 5e-3).unwrap();
        let z = cross_excess_term(&mu, &p, &phi, shape).unwrap();
        assert!(z.l1 <= excess_l1_bound(&p, &phi));
    }
}

proptest! {
    #[test]
    fn energy_is_translation_invariant(x in prop::collection::vec(-1.0f64..1.0, 1..15), c in -2.0f64..2.0) {
        let w = self_convolve(&make_laplace(0.2, 1).unwrap()).unwrap();
        let mu = pm(&x);
        let e0 = interaction_energy(&mu, &w);
        let e1 = interaction_energy(&mu.translated(&[c]), &w);
        prop_assert!((e0 - e1).abs() <= 1e-13);
        // with W = V*V the energy is at most W(0)/2
        prop_assert!(e0 <= 0.5 * w.eval1(0.0) + 1e-15);
    }

    #[test]
    fn forces_conserve_momentum(x in prop::collection::vec(-1.0f64..1.0, 2..15)) {
        let w = self_convolve(&make_gaussian(0.25, 1).unwrap()).unwrap();
        let f = interaction_force(&pm(&x), &w);
        prop_assert!(f.iter().sum::<f64>().abs() <= 1e-12);
    }
}
