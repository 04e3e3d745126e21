use approx::assert_abs_diff_eq;
use nlpme_core::diagnostics::{
    all_passed, assemble_sweep, check_el_residual, check_energy_monotone,
    check_entropy_dissipation, check_entropy_monotone, check_excess_decay, check_h_increase,
    check_holder, check_moment_bound, check_species_gap, entropy_floor, excess_row,
    l2_error_vs_reference, moment_bound, ExcessRow, RowMeasurement,
};
use nlpme_core::energy::{default_test_functions, InteractionEnergy, TestFunction};
use nlpme_core::jko::{
    solve_nlie_jko, truncated_jko_step, JkoConfig, JkoTrajectory, Monitor, StepRecord, SystemRecord,
};
use nlpme_core::kernels::{make_gaussian, scale, self_convolve, EvenKernel, MollifierKernel};
use nlpme_core::measures::{self, GridDensity, GridShape, ParticleMeasure};
use nlpme_core::pode::{ode_records, solve_nlie_ode, OdeConfig};
use nlpme_core::reference::BarenblattProfile;

struct Run {
    traj: JkoTrajectory,
    rho0: GridDensity,
    v: MollifierKernel,
    energy: InteractionEnergy,
    grid: GridShape,
}

fn barenblatt_run(t0: f64, n: usize, eps: f64, tau: f64, t_end: f64) -> Run {
    let v = scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap();
    let energy = InteractionEnergy::new(self_convolve(&v).unwrap());
    let rho0 = BarenblattProfile::new(t0)
        .unwrap()
        .grid(0.0, GridShape::with_spacing(-4.0, 4.0, 1e-3).unwrap())
        .unwrap();
    let grid = GridShape::with_spacing(-4.0, 4.0, eps / 5.0).unwrap();
    let mon = Monitor {
        v_eps: v.clone(),
        grid,
        record_wall_time: false,
    };
    let traj = solve_nlie_jko(&rho0, n, &JkoConfig::new(tau, t_end), &energy, &mon).unwrap();
    assert!(traj.is_complete());
    Run {
        traj,
        rho0,
        v,
        energy,
        grid,
    }
}

fn blank(step: usize, t: f64) -> StepRecord {
    StepRecord {
        step,
        t,
        energy: 0.0,
        dw2_increment: 0.0,
        inner_iters: 0,
        el_residual: 0.0,
        m2: 0.0,
        entropy_v: 0.0,
        h1_v: 0.0,
        wall_ms: 0.0,
    }
}

#[test]
fn constant_single_particle_passes_trivially() {
    let recs: Vec<StepRecord> = (0..5).map(|k| blank(k, k as f64 * 0.1)).collect();
    let v = check_energy_monotone(&recs, Some(0.1), 0.0);
    assert!(v.passed);
    assert_eq!(v.value, 0.0);
    assert!(check_moment_bound(&recs, 0.0, 1.0, 0.4).passed);
    let snaps = vec![ParticleMeasure::new_1d(vec![0.0]).unwrap(); 5];
    let times: Vec<f64> = recs.iter().map(|r| r.t).collect();
    assert!(check_holder(&snaps, &times, 0.2, 0.1, 5).unwrap().passed);
}

#[test]
fn tampered_energy_fails_the_step_inequality() {
    let run = barenblatt_run(1.0, 60, 0.2, 2e-3, 0.04);
    let tau = run.traj.tau;
    assert!(check_energy_monotone(&run.traj.records, Some(tau), 1e-8).passed);
    let mut recs = run.traj.records.clone();
    recs[7].energy += 1e-3;
    let v = check_energy_monotone(&recs, Some(tau), 1e-8);
    assert!(!v.passed);
    assert!(v.detail.contains("step 7"), "{}", v.detail);
}

#[test]
fn large_step_ode_run_is_reported_not_fatal() {
    let eps = 0.2;
    let w = self_convolve(&scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap()).unwrap();
    let mu0 = ParticleMeasure::new_1d((0..30).map(|k| -0.3 + 0.02 * k as f64).collect()).unwrap();
    let traj = solve_nlie_ode(&mu0, &w, &OdeConfig::new(eps, 10.0 * eps)).unwrap();
    let mon = Monitor {
        v_eps: scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap(),
        grid: GridShape::with_spacing(-20.0, 20.0, 0.04).unwrap(),
        record_wall_time: false,
    };
    if traj.failure.is_none() {
        let v = check_energy_monotone(&ode_records(&traj, &w, &mon).unwrap(), None, 0.0);
        assert!(v.value.is_finite());
    }
}

#[test]
fn moment_bound_holds_but_not_with_a_tenth_of_the_horizon() {
    let t_end = 1.0;
    let run = barenblatt_run(0.1, 100, 0.2, 5e-3, t_end);
    let m2_0 = run.rho0.integrate_against(|x| x * x);
    let l2 = measures::l2_norm_sq(&run.rho0);
    let ok = check_moment_bound(&run.traj.records, m2_0, l2, t_end);
    assert!(ok.passed, "{ok:?}");
    let tight = check_moment_bound(&run.traj.records, m2_0, l2, t_end / 10.0);
    assert!(!tight.passed, "T/10 bound should be violated: {tight:?}");
    assert_abs_diff_eq!(
        tight.limit,
        moment_bound(m2_0, l2, t_end / 10.0),
        epsilon = 1e-15
    );
}

#[test]
fn holder_bound_and_teleporting_control() {
    let run = barenblatt_run(1.0, 80, 0.2, 1e-3, 0.1);
    let e0 = run.traj.records[0].energy;
    let times = run.traj.times();
    let v = check_holder(&run.traj.snapshots, &times, e0, 1e-3, 20).unwrap();
    assert!(v.passed, "{v:?}");
    // a trajectory that jumps by 1 at mid-time cannot be Hölder with this constant
    let mut snaps = run.traj.snapshots.clone();
    let half = snaps.len() / 2;
    for s in &mut snaps[half..] {
        *s = s.translated(&[1.0]);
    }
    assert!(!check_holder(&snaps, &times, e0, 1e-3, 20).unwrap().passed);
    assert!(check_holder(&snaps, &times[1..], e0, 1e-3, 20).is_err());
}

#[test]
fn frozen_profile_dissipation_is_exact_and_a_sharp_one_breaks_the_budget() {
    let tau = 1e-2;
    let steps = 20;
    let shape = GridShape::with_spacing(-3.0, 3.0, 1e-3).unwrap();
    let mk = |sigma: f64| {
        GridDensity::from_fn(shape, |x| {
            (-0.5 * x * x / (sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        })
        .unwrap()
    };
    let v = scale(&make_gaussian(1.0, 1).unwrap(), 0.2).unwrap();
    for (sigma, should_pass) in [(0.5, true), (0.05, false)] {
        let g = mk(sigma);
        let recs: Vec<StepRecord> = (0..=steps)
            .map(|k| StepRecord {
                entropy_v: measures::entropy(&g),
                h1_v: measures::h1_seminorm_sq(&g),
                m2: sigma * sigma,
                ..blank(k, k as f64 * tau)
            })
            .collect();
        let l2 = measures::l2_norm_sq(&g);
        let m2_bound = moment_bound(sigma * sigma, l2, steps as f64 * tau);
        let (verdict, budget) =
            check_entropy_dissipation(&recs, tau, l2, measures::entropy(&g), m2_bound, &v);
        assert_abs_diff_eq!(
            budget.integral,
            steps as f64 * tau * measures::h1_seminorm_sq(&g),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(budget.entropy_drop, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            budget.entropy_floor,
            entropy_floor(m2_bound + v.second_moment()),
            epsilon = 1e-15
        );
        assert!(budget.floor_margin >= 0.0);
        assert_eq!(verdict.passed, should_pass, "sigma {sigma}: {verdict:?}");
    }
}

#[test]
fn barenblatt_run_stays_within_the_dissipation_budget() {
    let t_end = 0.1;
    let run = barenblatt_run(1.0, 100, 0.2, 1e-3, t_end);
    let l2 = measures::l2_norm_sq(&run.rho0);
    let m2_0 = run.rho0.integrate_against(|x| x * x);
    let (v, b) = check_entropy_dissipation(
        &run.traj.records,
        1e-3,
        l2,
        measures::entropy(&run.rho0),
        moment_bound(m2_0, l2, t_end),
        &run.v,
    );
    assert!(v.passed, "{v:?}");
    assert!(b.used() < 1.0 && b.used() > 0.0);
    assert!(check_entropy_monotone(&run.traj.records, 1e-2).passed);
}

#[test]
fn truncated_solver_fails_the_residual_check() {
    let run = barenblatt_run(1.0, 50, 0.2, 2e-3, 0.02);
    let good = check_el_residual(&run.traj.records[1..], 1e-9);
    assert!(good.passed, "{good:?}");
    let tau = run.traj.tau;
    let mut recs = Vec::new();
    let mut prev = run.traj.snapshots[0].clone();
    for step in 1..=5 {
        let next = truncated_jko_step(&prev, tau, &run.energy, 2).unwrap();
        recs.push(StepRecord {
            el_residual: nlpme_core::jko::euler_lagrange_residual(
                &prev,
                &next,
                tau,
                &run.energy.kernel,
            ),
            ..blank(step, step as f64 * tau)
        });
        prev = next;
    }
    assert!(!check_el_residual(&recs, 1e-9).passed);
}

#[test]
fn species_and_advisory_checks() {
    let sys: Vec<SystemRecord> = (0..4)
        .map(|k| SystemRecord {
            step: k,
            t: k as f64,
            h_energy: 1.0,
            k_energy: 0.0,
            h_increase: if k == 2 { 0.3 } else { 0.0 },
            species_gap: if k == 3 { 1e-6 } else { 0.0 },
        })
        .collect();
    assert!(!check_species_gap(&sys, 1e-8).passed);
    assert!(check_species_gap(&sys[..3], 1e-8).passed);
    let adv = check_h_increase(&sys);
    assert!(adv.advisory && adv.passed);
    assert_eq!(adv.value, 0.3);
    let failing_advisory = nlpme_core::diagnostics::Verdict {
        passed: false,
        ..adv
    };
    assert!(all_passed(&[failing_advisory]));
}

#[test]
fn excess_rows_on_a_short_run() {
    let run = barenblatt_run(1.0, 80, 0.2, 2e-3, 0.02);
    let fns = default_test_functions();
    let row = excess_row(0.2, &run.traj.snapshots, 2e-3, &run.v, &fns, run.grid).unwrap();
    assert_eq!(row.sup_l1.len(), fns.len());
    for (l, b) in row.sup_l1.iter().zip(&row.bound) {
        assert!(l <= b);
    }
    // a test function away from the mass sees no excess
    let far = [TestFunction::bump(3.7, 0.25).unwrap()];
    let row = excess_row(0.2, &run.traj.snapshots, 2e-3, &run.v, &far, run.grid).unwrap();
    assert_eq!(row.l1_max(), 0.0);
    assert_eq!(row.l2_max(), 0.0);
}

#[test]
fn excess_decay_verdicts_on_synthetic_rows() {
    let row = |eps: f64, l1: f64, l2: f64| ExcessRow {
        eps,
        sup_l1: vec![l1],
        bound: vec![eps],
        l2: vec![l2],
    };
    let linear = [
        row(0.4, 0.2, 0.1),
        row(0.2, 0.1, 0.05),
        row(0.1, 0.05, 0.02),
    ];
    let v = check_excess_decay(&linear, (0.4, 0.6));
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|x| x.passed), "{v:?}");
    let quadratic = [
        row(0.4, 0.2, 0.1),
        row(0.2, 0.05, 0.05),
        row(0.1, 0.0125, 0.02),
    ];
    let v = check_excess_decay(&quadratic, (0.4, 0.6));
    assert!(v[0].passed && !v[1].passed && v[2].passed);
    let over = [row(0.4, 0.5, 0.1), row(0.2, 0.1, 0.2)];
    let v = check_excess_decay(&over, (0.4, 0.6));
    assert!(!v[0].passed && !v[2].passed);
}

#[test]
fn l2_error_of_the_reference_against_itself_is_small() {
    // mollified quantile particles of the exact profile: the error is the smoothing error only
    let eps = 0.05;
    let v = scale(&make_gaussian(1.0, 1).unwrap(), eps).unwrap();
    let b = BarenblattProfile::new(1.0).unwrap();
    let fine = GridShape::with_spacing(-3.0, 3.0, 1e-3).unwrap();
    let times = [0.0, 0.1, 0.2];
    let snaps: Vec<ParticleMeasure> = times
        .iter()
        .map(|&t| measures::quantiles_from_density(&b.grid(t, fine).unwrap(), 2000).unwrap())
        .collect();
    let grid = GridShape::with_spacing(-3.0, 3.0, eps / 5.0).unwrap();
    let e = l2_error_vs_reference(&snaps, &times, &v, grid, &b).unwrap();
    let frozen = vec![snaps[0].clone(); 3];
    let e_frozen = l2_error_vs_reference(&frozen, &times, &v, grid, &b).unwrap();
    assert!(e < e_frozen, "{e} vs {e_frozen}");
    let wide = scale(&make_gaussian(1.0, 1).unwrap(), 0.4).unwrap();
    assert!(e < l2_error_vs_reference(&snaps, &times, &wide, grid, &b).unwrap());
}

#[test]
fn sweep_assembly_marks_failures_and_degenerate_sweeps() {
    let m = |eps: f64, e: f64| RowMeasurement {
        eps,
        e_l2: e,
        excess_l1_max: 0.0,
        excess_l2: 0.0,
        h1_budget_used: 0.5,
        excess: None,
    };
    let single = assemble_sweep(vec![(0.2, Ok(m(0.2, 0.01)))]);
    assert!(single.passed);
    assert_eq!(single.rows.len(), 1);
    assert!(single.rows[0].ratio_prev.is_nan());

    let rows = assemble_sweep(vec![
        (0.1, Ok(m(0.1, 0.01))),
        (0.2, Err("boom".into())),
        (0.4, Ok(m(0.4, 0.03))),
    ]);
    assert!(!rows.passed);
    let eps: Vec<f64> = rows.rows.iter().map(|r| r.eps).collect();
    assert_eq!(eps, vec![0.4, 0.2, 0.1]);
    assert_eq!(rows.rows[1].verdict, "failed");
    assert_eq!(rows.rows[2].verdict, "pass");
    assert_abs_diff_eq!(rows.rows[2].ratio_prev, 1.0 / 3.0, epsilon = 1e-15);

    let up = assemble_sweep(vec![(0.4, Ok(m(0.4, 0.01))), (0.2, Ok(m(0.2, 0.02)))]);
    assert!(!up.passed);
    assert_eq!(up.rows[1].verdict, "fail");
}
