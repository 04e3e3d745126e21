//! Minimising-movement (JKO) steps in Lagrangian 1-D coordinates.
//!
//! For equal-weight sorted particles the squared Wasserstein distance to the
//! previous state is `(1/N) Σ (x_i - p_i)^2`, so a step minimises
//!
//! ```text
//! G(x) = 1/(2τN) Σ (x_i - p_i)^2 + w/(2N^2) Σ_i Σ_j W(x_i - x_j) + c/(NM) Σ_i Σ_k K(x_i - q_k)
//! ```
//!
//! where the last term is a frozen potential generated by another species
//! (semi-implicit two-species scheme). The minimiser is found by gradient
//! descent with Armijo backtracking, warm-started at `p`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::{cross_sum_1d, pair_sum_1d, InteractionEnergy, RelativeEnergy};
use crate::kernels::{EvenKernel, InteractionKernel, MollifierKernel};
use crate::measures::{self, GridDensity, GridShape, ParticleMeasure};
use crate::{Error, Result};

/// What to do when the minimiser comes out unsorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    /// Fail the step.
    #[default]
    Assert,
    /// Re-sort the output and continue (logged).
    Resort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoConfig {
    pub tau: f64,
    pub t_end: f64,
    /// Sup-norm tolerance on the Euler–Lagrange residual `N ∇G`.
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub ordering: OrderingPolicy,
}

impl Default for JkoConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            t_end: 0.1,
            tol: 1e-9,
            max_iter: 10_000,
            armijo_c: 1e-4,
            shrink: 0.5,
            ordering: OrderingPolicy::Assert,
        }
    }
}

impl JkoConfig {
    pub fn new(tau: f64, t_end: f64) -> Self {
        Self {
            tau,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", "must be positive"));
        }
        if !(self.t_end > self.tau) {
            return Err(Error::param(
                "t_end",
                format!("must exceed tau = {}", self.tau),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("jko.tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("jko.max_iter", "must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::param("jko.armijo_c", "must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::param("jko.shrink", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `⌊T/τ⌋`, robust to the representation error of `T/τ`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.tau + 1e-9).floor() as usize
    }
}

/// Per-step observables; also the persisted CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    #[serde(rename = "dW2_increment")]
    pub dw2_increment: f64,
    pub inner_iters: usize,
    pub el_residual: f64,
    pub m2: f64,
    pub entropy_v: f64,
    pub h1_v: f64,
    pub wall_ms: f64,
}

/// One species' objective.
struct Objective<'a> {
    prev: &'a [f64],
    tau: f64,
    kernel: &'a InteractionKernel,
    weight: f64,
    frozen: Option<(&'a InteractionKernel, f64, &'a [f64])>,
    include_diagonal: bool,
}

impl Objective<'_> {
    /// Returns `G(x)` and, if asked, writes `r = N ∇G(x)` into `res`.
    fn eval(&self, x: &[f64], res: Option<&mut [f64]>) -> f64 {
        let n = x.len() as f64;
        let mut transport = 0.0;
        for (xi, pi) in x.iter().zip(self.prev) {
            transport += (xi - pi) * (xi - pi);
        }
        transport /= 2.0 * self.tau * n;
        match res {
            None => {
                let s = pair_sum_1d(x, self.kernel, None);
                let mut g = transport + self.weight * self.self_energy(n, s);
                if let Some((k, c, q)) = self.frozen {
                    g += c * cross_sum_1d(x, q, k, None) / (n * q.len() as f64);
                }
                g
            }
            Some(r) => {
                r.iter_mut().for_each(|v| *v = 0.0);
                let s = pair_sum_1d(x, self.kernel, Some(r));
                for v in r.iter_mut() {
                    *v *= self.weight / n;
                }
                let mut g = transport + self.weight * self.self_energy(n, s);
                if let Some((k, c, q)) = self.frozen {
                    let m = q.len() as f64;
                    let mut cg = vec![0.0; x.len()];
                    g += c * cross_sum_1d(x, q, k, Some(&mut cg)) / (n * m);
                    for (ri, ci) in r.iter_mut().zip(&cg) {
                        *ri += c * ci / m;
                    }
                }
                for ((ri, xi), pi) in r.iter_mut().zip(x).zip(self.prev) {
                    *ri += (xi - pi) / self.tau;
                }
                g
            }
        }
    }

    fn self_energy(&self, n: f64, offdiag: f64) -> f64 {
        let diag = if self.include_diagonal {
            n * self.kernel.profile(0.0)
        } else {
            0.0
        };
        (diag + 2.0 * offdiag) / (2.0 * n * n)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Result of a converged inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolve {
    pub positions: Vec<f64>,
    pub objective_start: f64,
    pub objective_end: f64,
    pub iters: usize,
    pub residual: f64,
}

/// Descent iterations until the residual drops below `cfg.tol` or
/// `cfg.max_iter` is reached; the flag reports convergence.
fn descend(obj: &Objective<'_>, cfg: &JkoConfig) -> (InnerSolve, bool) {
    let n = obj.prev.len();
    let mut x = obj.prev.to_vec();
    let mut r = vec![0.0; n];
    let mut g = obj.eval(&x, Some(&mut r));
    let g0 = g;
    let mut xn = vec![0.0; n];
    let mut rn = vec![0.0; n];
    let mut iters = 0;
    let converged = loop {
        let rinf = sup(&r);
        if rinf <= cfg.tol {
            break true;
        }
        if iters >= cfg.max_iter {
            break false;
        }
        // descent along -r = -N ∇G; directional derivative is -|r|^2/N
        let slope = r.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let noise = 1e-13 * g.abs().max(1.0);
        let mut alpha = obj.tau;
        let mut accepted = false;
        for _ in 0..64 {
            for i in 0..n {
                xn[i] = x[i] - alpha * r[i];
            }
            let gn = obj.eval(&xn, Some(&mut rn));
            let armijo = gn <= g - cfg.armijo_c * alpha * slope;
            // below round-off the objective cannot resolve the decrease; accept
            // steps that do not raise it beyond noise and shrink the residual
            let roundoff = gn <= g + noise && sup(&rn) < rinf;
            if armijo || roundoff {
                std::mem::swap(&mut x, &mut xn);
                std::mem::swap(&mut r, &mut rn);
                g = gn;
                accepted = true;
                break;
            }
            alpha *= cfg.shrink;
        }
        if !accepted {
            break false;
        }
        iters += 1;
    };
    let sol = InnerSolve {
        residual: sup(&r),
        positions: x,
        objective_start: g0,
        objective_end: g,
        iters,
    };
    (sol, converged)
}

fn minimise(obj: &Objective<'_>, cfg: &JkoConfig) -> Result<InnerSolve> {
    match descend(obj, cfg) {
        (sol, true) => Ok(sol),
        (sol, false) => Err(Error::NonConvergence {
            iters: sol.iters,
            residual: sol.residual,
            tol: cfg.tol,
        }),
    }
}

fn enforce_order(mut x: Vec<f64>, policy: OrderingPolicy) -> Result<Vec<f64>> {
    if let Some(i) = x.windows(2).position(|w| w[1] < w[0]) {
        match policy {
            OrderingPolicy::Assert => return Err(Error::Ordering { index: i }),
            OrderingPolicy::Resort => {
                log::warn!("JKO minimiser unsorted at index {i}; re-sorting");
                x.sort_by(f64::total_cmp);
            }
        }
    }
    Ok(x)
}

/// Outcome of one single-species step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: ParticleMeasure,
    /// `𝒲[ρ^{n+1}]` (diagonal per the energy's flag).
    pub energy: f64,
    pub dw2: f64,
    pub objective_start: f64,
    pub objective_end: f64,
    pub inner_iters: usize,
    pub el_residual: f64,
}

/// One JKO step for `𝒲` from `prev`.
pub fn jko_step(
    prev: &ParticleMeasure,
    tau: f64,
    energy: &InteractionEnergy,
    cfg: &JkoConfig,
) -> Result<StepOutcome> {
    if prev.dim() != 1 {
        return Err(Error::Unsupported("JKO steps in dimension > 1".into()));
    }
    let obj = Objective {
        prev: prev.coords(),
        tau,
        kernel: &energy.kernel,
        weight: 1.0,
        frozen: None,
        include_diagonal: energy.include_diagonal,
    };
    let sol = minimise(&obj, cfg)?;
    let next = ParticleMeasure::from_sorted_unchecked(enforce_order(sol.positions, cfg.ordering)?);
    let dw2 = measures::wasserstein2_1d(prev, &next)?;
    Ok(StepOutcome {
        energy: energy.value(&next),
        el_residual: euler_lagrange_residual(prev, &next, tau, &energy.kernel),
        dw2,
        objective_start: sol.objective_start,
        objective_end: sol.objective_end,
        inner_iters: sol.iters,
        next,
    })
}

/// Runs the inner solver for at most `iters` iterations and returns the
/// (generally unconverged) iterate; used as a negative control.
pub fn truncated_jko_step(
    prev: &ParticleMeasure,
    tau: f64,
    energy: &InteractionEnergy,
    iters: usize,
) -> Result<ParticleMeasure> {
    let cfg = JkoConfig {
        tau,
        t_end: 2.0 * tau,
        max_iter: iters,
        ..JkoConfig::default()
    };
    let obj = Objective {
        prev: prev.coords(),
        tau,
        kernel: &energy.kernel,
        weight: 1.0,
        frozen: None,
        include_diagonal: true,
    };
    ParticleMeasure::new_1d(descend(&obj, &cfg).0.positions)
}

/// `max_i |(x_i - p_i)/τ + (1/N) Σ_j ∇W(x_i - x_j)|`.
pub fn euler_lagrange_residual(
    prev: &ParticleMeasure,
    next: &ParticleMeasure,
    tau: f64,
    w: &InteractionKernel,
) -> f64 {
    let x = next.coords();
    let n = x.len() as f64;
    let mut g = vec![0.0; x.len()];
    pair_sum_1d(x, w, Some(&mut g));
    x.iter()
        .zip(prev.coords())
        .zip(&g)
        .map(|((xi, pi), gi)| ((xi - pi) / tau + gi / n).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Trajectories

/// Grid observables recorded along a run.
#[derive(Debug, Clone)]
pub struct Monitor {
    /// Mollifier producing `v = V_ε * ρ`.
    pub v_eps: MollifierKernel,
    pub grid: GridShape,
    pub record_wall_time: bool,
}

impl Monitor {
    pub fn mollified(&self, mu: &ParticleMeasure) -> Result<GridDensity> {
        measures::mollify(mu, &self.v_eps, self.grid)
    }

    fn observe(&self, mu: &ParticleMeasure) -> Result<(f64, f64, f64)> {
        let v = self.mollified(mu)?;
        Ok((
            measures::second_moment(mu),
            measures::entropy(&v),
            measures::h1_seminorm_sq(&v),
        ))
    }
}

#[derive(Debug)]
pub struct JkoTrajectory {
    pub tau: f64,
    pub snapshots: Vec<ParticleMeasure>,
    pub records: Vec<StepRecord>,
    /// Set when the run aborted; the trajectory is then partial.
    pub failure: Option<Error>,
}

impl JkoTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Wall time since `clock`; the clock is only started when requested (wasm has none).
fn elapsed_ms(clock: Option<Instant>) -> f64 {
    clock.map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3)
}

fn initial_record(mu: &ParticleMeasure, energy: f64, mon: &Monitor) -> Result<StepRecord> {
    let (m2, entropy_v, h1_v) = mon.observe(mu)?;
    Ok(StepRecord {
        step: 0,
        t: 0.0,
        energy,
        dw2_increment: 0.0,
        inner_iters: 0,
        el_residual: 0.0,
        m2,
        entropy_v,
        h1_v,
        wall_ms: 0.0,
    })
}

/// JKO trajectory for `𝒲_ε` started from particles `mu0`.
pub fn solve_nlie_jko_from(
    mu0: ParticleMeasure,
    cfg: &JkoConfig,
    energy: &InteractionEnergy,
    mon: &Monitor,
) -> Result<JkoTrajectory> {
    cfg.validate()?;
    let mut traj = JkoTrajectory {
        tau: cfg.tau,
        records: vec![initial_record(&mu0, energy.value(&mu0), mon)?],
        snapshots: vec![mu0],
        failure: None,
    };
    for step in 1..=cfg.steps() {
        let clock = mon.record_wall_time.then(Instant::now);
        let prev = traj.snapshots.last().unwrap();
        let res = jko_step(prev, cfg.tau, energy, cfg).and_then(|out| {
            let (m2, entropy_v, h1_v) = mon.observe(&out.next)?;
            Ok((out, m2, entropy_v, h1_v))
        });
        match res {
            Ok((out, m2, entropy_v, h1_v)) => {
                traj.records.push(StepRecord {
                    step,
                    t: step as f64 * cfg.tau,
                    energy: out.energy,
                    dw2_increment: out.dw2,
                    inner_iters: out.inner_iters,
                    el_residual: out.el_residual,
                    m2,
                    entropy_v,
                    h1_v,
                    wall_ms: elapsed_ms(clock),
                });
                traj.snapshots.push(out.next);
            }
            Err(e) => {
                log::error!("JKO aborted at step {step}: {e}");
                traj.failure = Some(Error::Step {
                    step,
                    source: Box::new(e),
                });
                break;
            }
        }
    }
    Ok(traj)
}

/// JKO trajectory from a density, discretised by `n` quantile particles.
pub fn solve_nlie_jko(
    rho0: &GridDensity,
    n: usize,
    cfg: &JkoConfig,
    energy: &InteractionEnergy,
    mon: &Monitor,
) -> Result<JkoTrajectory> {
    let mu0 = measures::quantiles_from_density(rho0, n)?;
    solve_nlie_jko_from(mu0, cfg, energy, mon)
}

// ---------------------------------------------------------------------------
// Two species

/// System-level observables of a semi-implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub step: usize,
    pub t: f64,
    /// `ℋ_ε[ρ^n]`.
    pub h_energy: f64,
    /// `𝒦_ε[ρ^n | ρ^{n-1}]` (zero at step 0).
    pub k_energy: f64,
    /// `max(0, ℋ_ε[ρ^n] - ℋ_ε[ρ^{n-1}])`.
    pub h_increase: f64,
    /// `d_W(ρ1^n, ρ2^n)`.
    pub species_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemStepOutcome {
    pub next: (ParticleMeasure, ParticleMeasure),
    pub species: [StepOutcome; 2],
}

fn species_step(
    prev: &ParticleMeasure,
    other_prev: &ParticleMeasure,
    tau: f64,
    h: &InteractionKernel,
    ah: f64,
    k: &InteractionKernel,
    ak: f64,
    cfg: &JkoConfig,
) -> Result<StepOutcome> {
    let frozen = (ak != 0.0).then_some((k, ak, other_prev.coords()));
    let obj = Objective {
        prev: prev.coords(),
        tau,
        kernel: h,
        weight: ah,
        frozen,
        include_diagonal: true,
    };
    let sol = minimise(&obj, cfg)?;
    let next = ParticleMeasure::from_sorted_unchecked(enforce_order(sol.positions, cfg.ordering)?);
    // energy reported: A_ii 𝒲_{H_i}[next] + A_ij ∬ K_i d(other_prev) d(next)
    let n = next.len() as f64;
    let m = other_prev.len() as f64;
    let self_e = ah * InteractionEnergy::new(h.clone()).value(&next);
    let cross_e = if ak != 0.0 {
        ak * cross_sum_1d(next.coords(), other_prev.coords(), k, None) / (n * m)
    } else {
        0.0
    };
    let mut g = vec![0.0; next.len()];
    pair_sum_1d(next.coords(), h, Some(&mut g));
    let mut cg = vec![0.0; next.len()];
    if ak != 0.0 {
        cross_sum_1d(next.coords(), other_prev.coords(), k, Some(&mut cg));
    }
    let el = next
        .coords()
        .iter()
        .zip(prev.coords())
        .enumerate()
        .map(|(i, (xi, pi))| ((xi - pi) / tau + ah * g[i] / n + ak * cg[i] / m).abs())
        .fold(0.0, f64::max);
    Ok(StepOutcome {
        dw2: measures::wasserstein2_1d(prev, &next)?,
        energy: self_e + cross_e,
        objective_start: sol.objective_start,
        objective_end: sol.objective_end,
        inner_iters: sol.iters,
        el_residual: el,
        next,
    })
}

/// Semi-implicit step: self terms implicit, cross terms frozen at `prev`.
/// The two species decouple and are solved independently.
pub fn semi_implicit_jko_step(
    prev: (&ParticleMeasure, &ParticleMeasure),
    tau: f64,
    re: &RelativeEnergy,
    cfg: &JkoConfig,
) -> Result<SystemStepOutcome> {
    re.a.validate()?;
    if prev.0.dim() != 1 || prev.1.dim() != 1 {
        return Err(Error::Unsupported("JKO steps in dimension > 1".into()));
    }
    let a = re.a;
    let s1 = species_step(prev.0, prev.1, tau, &re.h1, a.a11, &re.k1, a.a12, cfg).map_err(|e| {
        Error::Species {
            species: 1,
            source: Box::new(e),
        }
    })?;
    let s2 = species_step(prev.1, prev.0, tau, &re.h2, a.a22, &re.k2, a.a21, cfg).map_err(|e| {
        Error::Species {
            species: 2,
            source: Box::new(e),
        }
    })?;
    Ok(SystemStepOutcome {
        next: (s1.next.clone(), s2.next.clone()),
        species: [s1, s2],
    })
}

#[derive(Debug)]
pub struct NlisTrajectory {
    pub tau: f64,
    pub species: [JkoTrajectory; 2],
    pub system: Vec<SystemRecord>,
    pub failure: Option<Error>,
}

fn gap(a: &ParticleMeasure, b: &ParticleMeasure) -> f64 {
    measures::wasserstein2_1d(a, b)
        .map(f64::sqrt)
        .unwrap_or(f64::NAN)
}

/// Semi-implicit JKO trajectory for the two-species system.
pub fn solve_nlis_jko_from(
    mu0: (ParticleMeasure, ParticleMeasure),
    cfg: &JkoConfig,
    re: &RelativeEnergy,
    mons: (&Monitor, &Monitor),
) -> Result<NlisTrajectory> {
    cfg.validate()?;
    re.a.validate()?;
    let a = re.a;
    let e1 = a.a11 * InteractionEnergy::new(re.h1.clone()).value(&mu0.0);
    let e2 = a.a22 * InteractionEnergy::new(re.h2.clone()).value(&mu0.1);
    let h0 = re.self_part((&mu0.0, &mu0.1));
    let mut t1 = JkoTrajectory {
        tau: cfg.tau,
        records: vec![initial_record(&mu0.0, e1, mons.0)?],
        snapshots: vec![mu0.0.clone()],
        failure: None,
    };
    let mut t2 = JkoTrajectory {
        tau: cfg.tau,
        records: vec![initial_record(&mu0.1, e2, mons.1)?],
        snapshots: vec![mu0.1.clone()],
        failure: None,
    };
    let mut system = vec![SystemRecord {
        step: 0,
        t: 0.0,
        h_energy: h0,
        k_energy: 0.0,
        h_increase: 0.0,
        species_gap: gap(&mu0.0, &mu0.1),
    }];
    let mut failure = None;
    for step in 1..=cfg.steps() {
        let clock = mons.0.record_wall_time.then(Instant::now);
        let p1 = t1.snapshots.last().unwrap();
        let p2 = t2.snapshots.last().unwrap();
        let res = semi_implicit_jko_step((p1, p2), cfg.tau, re, cfg).and_then(|out| {
            let o1 = mons.0.observe(&out.next.0)?;
            let o2 = mons.1.observe(&out.next.1)?;
            let k = re.cross_part((&out.next.0, &out.next.1), (p1, p2))?;
            Ok((out, o1, o2, k))
        });
        let (out, o1, o2, k) = match res {
            Ok(v) => v,
            Err(e) => {
                log::error!("semi-implicit JKO aborted at step {step}: {e}");
                failure = Some(Error::Step {
                    step,
                    source: Box::new(e),
                });
                break;
            }
        };
        let t = step as f64 * cfg.tau;
        let wall = elapsed_ms(clock);
        for (traj, (o, s)) in [&mut t1, &mut t2]
            .into_iter()
            .zip([o1, o2].into_iter().zip(&out.species))
        {
            traj.records.push(StepRecord {
                step,
                t,
                energy: s.energy,
                dw2_increment: s.dw2,
                inner_iters: s.inner_iters,
                el_residual: s.el_residual,
                m2: o.0,
                entropy_v: o.1,
                h1_v: o.2,
                wall_ms: wall,
            });
        }
        let h = re.self_part((&out.next.0, &out.next.1));
        let h_prev = system.last().unwrap().h_energy;
        system.push(SystemRecord {
            step,
            t,
            h_energy: h,
            k_energy: k,
            h_increase: (h - h_prev).max(0.0),
            species_gap: gap(&out.next.0, &out.next.1),
        });
        let (n1, n2) = out.next;
        t1.snapshots.push(n1);
        t2.snapshots.push(n2);
    }
    Ok(NlisTrajectory {
        tau: cfg.tau,
        species: [t1, t2],
        system,
        failure,
    })
}
