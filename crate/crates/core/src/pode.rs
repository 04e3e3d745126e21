//! Forward integration of the particle ODEs, used to cross-validate JKO runs.

use serde::{Deserialize, Serialize};

use crate::energy::{cross_sum, interaction_energy, interaction_force, RelativeEnergy};
use crate::jko::{Monitor, StepRecord};
use crate::kernels::{EvenKernel, InteractionKernel};
use crate::measures::{self, ParticleMeasure};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    ExplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Keep a snapshot every this many steps.
    pub record_every: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 0.1,
            integrator: Integrator::Rk4,
            record_every: 1,
        }
    }
}

impl OdeConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::param(
                "t_end",
                format!("must exceed dt = {}", self.dt),
            ));
        }
        if self.record_every == 0 {
            return Err(Error::param("ode.record_every", "must be positive"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }
}

/// `Ẋ_i = -(1/N) Σ_j ∇W(X_i - X_j)`.
pub fn nlie_rhs(mu: &ParticleMeasure, w: &InteractionKernel) -> Vec<f64> {
    interaction_force(mu, w)
}

/// Velocities of both species:
/// `Ẋ¹_i = -A11 (1/N) Σ ∇H1(X¹_i - X¹_j) - A12 (1/M) Σ ∇K1(X¹_i - X²_k)` and symmetrically.
pub fn nlis_rhs(
    mu: (&ParticleMeasure, &ParticleMeasure),
    re: &RelativeEnergy,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = re.a;
    let species = |own: &ParticleMeasure,
                   other: &ParticleMeasure,
                   h: &InteractionKernel,
                   ah: f64,
                   k: &InteractionKernel,
                   ak: f64|
     -> Result<Vec<f64>> {
        let mut v: Vec<f64> = interaction_force(own, h).iter().map(|f| ah * f).collect();
        if ak != 0.0 {
            let mut g = vec![0.0; v.len()];
            cross_sum(own, other, k, Some(&mut g))?;
            let m = other.len() as f64;
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi -= ak * gi / m;
            }
        }
        Ok(v)
    };
    Ok((
        species(mu.0, mu.1, &re.h1, a.a11, &re.k1, a.a12)?,
        species(mu.1, mu.0, &re.h2, a.a22, &re.k2, a.a21)?,
    ))
}

/// Snapshots of an ODE run. In 1-D every stored state is sorted.
#[derive(Debug)]
pub struct OdeTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<ParticleMeasure>,
    /// Number of steps in which the particle order changed (1-D).
    pub crossings: usize,
    pub failure: Option<Error>,
}

/// Sorts each `len`-sized 1-D block of `y`; returns whether anything moved.
fn resort_blocks(y: &mut [f64], blocks: &[usize]) -> bool {
    let mut changed = false;
    let mut off = 0;
    for &len in blocks {
        let s = &mut y[off..off + len];
        if s.windows(2).any(|w| w[1] < w[0]) {
            s.sort_by(f64::total_cmp);
            changed = true;
        }
        off += len;
    }
    changed
}

fn step<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    y: &[f64],
    dt: f64,
    f: &F,
    integrator: Integrator,
) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, k)| x + s * k).collect()
    };
    match integrator {
        Integrator::ExplicitEuler => Ok(axpy(y, dt, &f(y)?)),
        Integrator::Rk4 => {
            let k1 = f(y)?;
            let k2 = f(&axpy(y, 0.5 * dt, &k1))?;
            let k3 = f(&axpy(y, 0.5 * dt, &k2))?;
            let k4 = f(&axpy(y, dt, &k3))?;
            Ok(y.iter()
                .enumerate()
                .map(|(i, x)| x + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

/// Integrates a flattened state made of `blocks` species of sizes `blocks[s] * dim`.
fn integrate_flat<F>(
    y0: Vec<f64>,
    dim: usize,
    blocks: &[usize],
    f: F,
    cfg: &OdeConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize, Option<Error>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut y = y0;
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut crossings = 0;
    let mut failure = None;
    for n in 1..=cfg.steps() {
        match step(&y, cfg.dt, &f, cfg.integrator) {
            Ok(mut next) => {
                if next.iter().any(|v| !v.is_finite()) {
                    failure = Some(Error::BlowUp { step: n });
                    break;
                }
                if dim == 1 && resort_blocks(&mut next, blocks) {
                    crossings += 1;
                }
                y = next;
            }
            Err(e) => {
                failure = Some(Error::Step {
                    step: n,
                    source: Box::new(e),
                });
                break;
            }
        }
        if n % cfg.record_every == 0 {
            times.push(n as f64 * cfg.dt);
            states.push(y.clone());
        }
    }
    Ok((times, states, crossings, failure))
}

/// Integrates `Ẋ = rhs(X)` from `mu0`.
pub fn integrate<F>(mu0: &ParticleMeasure, rhs: F, cfg: &OdeConfig) -> Result<OdeTrajectory>
where
    F: Fn(&ParticleMeasure) -> Vec<f64>,
{
    let dim = mu0.dim();
    let f =
        |y: &[f64]| -> Result<Vec<f64>> { Ok(rhs(&ParticleMeasure::from_raw(dim, y.to_vec()))) };
    let (times, states, crossings, failure) =
        integrate_flat(mu0.coords().to_vec(), dim, &[mu0.len()], f, cfg)?;
    Ok(OdeTrajectory {
        dt: cfg.dt,
        times,
        snapshots: states
            .into_iter()
            .map(|s| ParticleMeasure::from_raw(dim, s))
            .collect(),
        crossings,
        failure,
    })
}

/// Integrates the two-species system; returns one trajectory per species.
pub fn integrate_pair(
    mu0: (&ParticleMeasure, &ParticleMeasure),
    re: &RelativeEnergy,
    cfg: &OdeConfig,
) -> Result<[OdeTrajectory; 2]> {
    let dim = mu0.0.dim();
    let split = mu0.0.coords().len();
    let mut y0 = mu0.0.coords().to_vec();
    y0.extend_from_slice(mu0.1.coords());
    let f = |y: &[f64]| -> Result<Vec<f64>> {
        let a = ParticleMeasure::from_raw(dim, y[..split].to_vec());
        let b = ParticleMeasure::from_raw(dim, y[split..].to_vec());
        let (va, vb) = nlis_rhs((&a, &b), re)?;
        Ok(va.into_iter().chain(vb).collect())
    };
    let (times, states, crossings, failure) =
        integrate_flat(y0, dim, &[mu0.0.len(), mu0.1.len()], f, cfg)?;
    let make = |lo: usize, hi: usize, failure: Option<Error>| OdeTrajectory {
        dt: cfg.dt,
        times: times.clone(),
        snapshots: states
            .iter()
            .map(|s| ParticleMeasure::from_raw(dim, s[lo..hi].to_vec()))
            .collect(),
        crossings,
        failure,
    };
    let total = split + mu0.1.coords().len();
    let second_failure = failure.as_ref().map(|e| Error::Domain(e.to_string()));
    Ok([make(0, split, failure), make(split, total, second_failure)])
}

/// NLIE particle ODE run from `mu0`.
pub fn solve_nlie_ode(
    mu0: &ParticleMeasure,
    w: &InteractionKernel,
    cfg: &OdeConfig,
) -> Result<OdeTrajectory> {
    let stiff = 0.5 * w.second_moment();
    if cfg.dt > stiff {
        log::warn!(
            "dt = {} exceeds the stiffness heuristic {stiff:.3e}",
            cfg.dt
        );
    }
    integrate(mu0, |mu| nlie_rhs(mu, w), cfg)
}

/// Step records for an ODE trajectory (same schema as JKO; `el_residual = 0`).
pub fn ode_records(
    traj: &OdeTrajectory,
    w: &InteractionKernel,
    mon: &Monitor,
) -> Result<Vec<StepRecord>> {
    let mut out = Vec::with_capacity(traj.snapshots.len());
    for (k, mu) in traj.snapshots.iter().enumerate() {
        let v = mon.mollified(mu)?;
        let dw2 = if k == 0 {
            0.0
        } else {
            measures::wasserstein2_1d(&traj.snapshots[k - 1], mu)?
        };
        out.push(StepRecord {
            step: k,
            t: traj.times[k],
            energy: interaction_energy(mu, w),
            dw2_increment: dw2,
            inner_iters: 0,
            el_residual: 0.0,
            m2: measures::second_moment(mu),
            entropy_v: measures::entropy(&v),
            h1_v: measures::h1_seminorm_sq(&v),
            wall_ms: 0.0,
        });
    }
    Ok(out)
}
