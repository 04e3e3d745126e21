//! Configuration-driven runs, sweeps and replay.
//!
//! A run directory holds
//! * `config.toml` — the resolved configuration,
//! * `MANIFEST` — completion status, failure point and file list (JSON),
//! * per species: `steps.csv`, `trajectory.csv`, `final_particles.csv`,
//!   `initial_density.csv` and mollified snapshots `v_step*.csv`,
//! * two-species runs: `species1/`, `species2/` and `system.csv`,
//! * `diagnostics.json` and `verdicts.json`.
//!
//! Verdicts are always computed by replaying the persisted CSVs, so
//! [`check`] on an untouched directory reproduces `verdicts.json` byte for byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, InitialSpec, Problem, RunConfig, Solver};
use crate::diagnostics::{self as diag, ExcessRow, H1Budget, RowMeasurement, SweepReport, Verdict};
use crate::energy::{excess_term, InteractionEnergy, RelativeEnergy};
use crate::io;
use crate::jko::{self, Monitor, StepRecord, SystemRecord};
use crate::kernels::{cross_convolve, scale, self_convolve, InteractionKernel, MollifierKernel};
use crate::measures::{self, GridDensity, GridShape, ParticleMeasure};
use crate::pode;
use crate::reference::{weak_residual_nlie, BarenblattProfile};
use crate::{Error, Result};

pub const MANIFEST: &str = "MANIFEST";
pub const VERDICTS: &str = "verdicts.json";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    pub problem: Problem,
    pub steps_completed: usize,
    pub failure_step: Option<usize>,
    pub error: Option<String>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn is_complete(&self) -> bool {
        self.status == "complete"
    }
}

/// Per-species quantities derived from the persisted trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesDiagnostics {
    pub eps: f64,
    pub step: f64,
    pub n: usize,
    pub snapshots: usize,
    pub w0: f64,
    pub m2_0: f64,
    pub rho0_l2sq: f64,
    pub rho0_entropy: f64,
    pub m2_bound: f64,
    pub h1: H1Budget,
    pub max_el_residual: f64,
    pub total_inner_iters: usize,
    pub weak_residual_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDiagnostics {
    /// `c ‖ρ^0‖^2`, `c = max{A11, A22}/2`.
    pub energy_bound: f64,
    /// `2 m_2(ρ^0) + 4 c T ‖ρ^0‖^2`.
    pub moment_bound: f64,
    /// Sum over steps of the positive increments of the self energy.
    pub observed_slack: f64,
    pub max_species_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub problem: Problem,
    pub solver: Solver,
    pub species: Vec<SpeciesDiagnostics>,
    pub system: Option<SystemDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub verdicts: Vec<Verdict>,
    pub diagnostics: DiagnosticsRecord,
}

impl Evaluation {
    pub fn passed(&self) -> bool {
        diag::all_passed(&self.verdicts)
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub evaluation: Option<Evaluation>,
}

impl RunSummary {
    /// Exit status: solve completed and every enabled check passed.
    pub fn success(&self) -> bool {
        self.manifest.is_complete() && self.evaluation.as_ref().map_or(true, Evaluation::passed)
    }
}

// ---------------------------------------------------------------------------
// Building blocks

fn single_eps(cfg: &RunConfig) -> Result<f64> {
    match cfg.eps_list().as_slice() {
        [e] => Ok(*e),
        _ => Err(Error::config(
            "epsilons",
            "a single run needs exactly one eps (use `sweep`)",
        )),
    }
}

/// `(V_eps, W_eps = V_eps * V_eps)` from a kernel block.
fn self_kernels(
    spec: &crate::config::KernelSpec,
    eps: f64,
) -> Result<(MollifierKernel, MollifierKernel, InteractionKernel)> {
    let v1 = spec.build()?;
    let v = scale(&v1, eps)?;
    let w = self_convolve(&v)?;
    Ok((v1, v, w))
}

fn species_dir(out: &Path, problem: Problem, s: usize) -> PathBuf {
    match problem {
        Problem::Nlis => out.join(format!("species{s}")),
        _ => out.to_path_buf(),
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

fn failure_step(e: &Error) -> Option<usize> {
    match e {
        Error::Step { step, .. } => Some(*step),
        Error::BlowUp { step } => Some(*step),
        _ => None,
    }
}

/// Index of the stored snapshot closest to `t`.
fn nearest(times: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, s) in times.iter().enumerate() {
        if (s - t).abs() < (times[best] - t).abs() {
            best = k;
        }
    }
    best
}

struct SpeciesOutput<'a> {
    records: &'a [StepRecord],
    times: &'a [f64],
    snapshots: &'a [ParticleMeasure],
    rho0: &'a GridDensity,
    mon: &'a Monitor,
}

fn write_species(
    out: &Path,
    dir: &Path,
    s: &SpeciesOutput,
    sample_times: &[f64],
    files: &mut Vec<String>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut put = |name: String| files.push(rel(out, &dir.join(name)));
    io::write_grid(&dir.join("initial_density.csv"), s.rho0)?;
    put("initial_density.csv".into());
    io::write_steps(&dir.join("steps.csv"), s.records)?;
    put("steps.csv".into());
    io::write_trajectory(&dir.join("trajectory.csv"), s.times, s.snapshots)?;
    put("trajectory.csv".into());
    if let Some(last) = s.snapshots.last() {
        io::write_particles(&dir.join("final_particles.csv"), last)?;
        put("final_particles.csv".into());
    }
    let mut written = Vec::new();
    for &t in sample_times {
        let k = nearest(s.times, t);
        if written.contains(&k) {
            continue;
        }
        written.push(k);
        let name = format!("v_step{k:06}.csv");
        io::write_grid(&dir.join(&name), &s.mon.mollified(&s.snapshots[k])?)?;
        put(name);
    }
    Ok(())
}

fn finish(
    out: &Path,
    cfg: &RunConfig,
    steps: usize,
    failure: Option<Error>,
    mut files: Vec<String>,
) -> Result<RunSummary> {
    files.insert(0, CONFIG.into());
    let manifest = Manifest {
        status: if failure.is_none() {
            "complete"
        } else {
            "failed"
        }
        .into(),
        problem: cfg.problem,
        steps_completed: steps,
        failure_step: failure.as_ref().and_then(failure_step),
        error: failure.as_ref().map(|e| e.to_string()),
        files,
    };
    io::write_json(&out.join(MANIFEST), &manifest)?;
    if let Some(e) = &failure {
        log::error!("run in {} failed: {e}", out.display());
        return Ok(RunSummary {
            out: out.to_path_buf(),
            manifest,
            evaluation: None,
        });
    }
    let evaluation = if cfg.problem == Problem::PmeReference {
        None
    } else {
        let ev = evaluate(out)?;
        io::write_json(&out.join(VERDICTS), &ev.verdicts)?;
        io::write_json(&out.join(DIAGNOSTICS), &ev.diagnostics)?;
        Some(ev)
    };
    Ok(RunSummary {
        out: out.to_path_buf(),
        manifest,
        evaluation,
    })
}

// ---------------------------------------------------------------------------
// Runs

/// Validates, runs and persists a configuration into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG), cfg.to_toml_string()?)?;
    match cfg.problem {
        Problem::PmeReference => {
            let files = write_reference(cfg, out)?;
            finish(out, cfg, 0, None, files)
        }
        Problem::Nlie => run_nlie(cfg, out),
        Problem::Nlis => run_nlis(cfg, out),
    }
}

fn run_nlie(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let eps = single_eps(cfg)?;
    let grid = cfg.grid_shape()?;
    let (_, v, w) = self_kernels(cfg.kernel_spec()?, eps)?;
    let rho0 = cfg.initial.density(grid)?;
    let mu0 = measures::quantiles_from_density(&rho0, cfg.n)?;
    let mon = Monitor {
        v_eps: v,
        grid,
        record_wall_time: cfg.record_wall_time,
    };
    let (records, times, snapshots, failure) = match cfg.solver {
        Solver::Jko => {
            let traj = jko::solve_nlie_jko_from(
                mu0,
                &cfg.jko_config()?,
                &InteractionEnergy::new(w),
                &mon,
            )?;
            let times = traj.times();
            (traj.records, times, traj.snapshots, traj.failure)
        }
        Solver::Ode => {
            let traj = pode::solve_nlie_ode(&mu0, &w, &cfg.ode_config()?)?;
            if traj.crossings > 0 {
                log::warn!("particle order changed in {} ODE steps", traj.crossings);
            }
            let records = pode::ode_records(&traj, &w, &mon)?;
            (records, traj.times, traj.snapshots, traj.failure)
        }
    };
    let mut files = Vec::new();
    let out_s = SpeciesOutput {
        records: &records,
        times: &times,
        snapshots: &snapshots,
        rho0: &rho0,
        mon: &mon,
    };
    write_species(out, out, &out_s, &cfg.sample_times, &mut files)?;
    finish(out, cfg, records.len().saturating_sub(1), failure, files)
}

/// Kernels of the two-species system at scale `eps`.
pub fn relative_energy_for(
    cfg: &RunConfig,
    eps: f64,
) -> Result<(RelativeEnergy, MollifierKernel, MollifierKernel)> {
    let (v1, v1e, h1) = self_kernels(cfg.kernel_spec()?, eps)?;
    let (v2, v2e, h2) = self_kernels(cfg.kernel2_spec()?, eps)?;
    let k1 = cross_convolve(&v1, &cfg.cross_weight, &v2, eps)?;
    let k2 = cross_convolve(&v2, &cfg.cross_weight, &v1, eps)?;
    Ok((
        RelativeEnergy::new(h1, h2, k1, k2, cfg.matrix()?)?,
        v1e,
        v2e,
    ))
}

fn system_records(
    snaps: (&[ParticleMeasure], &[ParticleMeasure]),
    times: &[f64],
    re: &RelativeEnergy,
) -> Result<Vec<SystemRecord>> {
    let mut out: Vec<SystemRecord> = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let cur = (&snaps.0[k], &snaps.1[k]);
        let h = re.self_part(cur);
        let (k_energy, inc) = if k == 0 {
            (0.0, 0.0)
        } else {
            let prev = (&snaps.0[k - 1], &snaps.1[k - 1]);
            (
                re.cross_part(cur, prev)?,
                (h - out[k - 1].h_energy).max(0.0),
            )
        };
        out.push(SystemRecord {
            step: k,
            t: times[k],
            h_energy: h,
            k_energy,
            h_increase: inc,
            species_gap: measures::wasserstein2_1d(cur.0, cur.1)?.sqrt(),
        });
    }
    Ok(out)
}

fn run_nlis(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let eps = single_eps(cfg)?;
    let grid = cfg.grid_shape()?;
    let (re, v1e, v2e) = relative_energy_for(cfg, eps)?;
    let rho1 = cfg.initial.density(grid)?;
    let rho2 = cfg.initial2_spec().density(grid)?;
    let mu1 = measures::quantiles_from_density(&rho1, cfg.n)?;
    let mu2 = measures::quantiles_from_density(&rho2, cfg.n)?;
    let mon = |v: MollifierKernel| Monitor {
        v_eps: v,
        grid,
        record_wall_time: cfg.record_wall_time,
    };
    let (m1, m2) = (mon(v1e), mon(v2e));
    let (recs, times, snaps, system, failure) = match cfg.solver {
        Solver::Jko => {
            let traj = jko::solve_nlis_jko_from((mu1, mu2), &cfg.jko_config()?, &re, (&m1, &m2))?;
            let times = traj.species[0].times();
            let [s1, s2] = traj.species;
            (
                [s1.records, s2.records],
                times,
                [s1.snapshots, s2.snapshots],
                traj.system,
                traj.failure,
            )
        }
        Solver::Ode => {
            let [t1, t2] = pode::integrate_pair((&mu1, &mu2), &re, &cfg.ode_config()?)?;
            let r1 = pode::ode_records(&t1, &re.h1, &m1)?;
            let r2 = pode::ode_records(&t2, &re.h2, &m2)?;
            let system = system_records((&t1.snapshots, &t2.snapshots), &t1.times, &re)?;
            (
                [r1, r2],
                t1.times,
                [t1.snapshots, t2.snapshots],
                system,
                t1.failure,
            )
        }
    };
    let mut files = Vec::new();
    for (s, (rho0, m)) in [(&rho1, &m1), (&rho2, &m2)].into_iter().enumerate() {
        let so = SpeciesOutput {
            records: &recs[s],
            times: &times[..recs[s].len().min(times.len())],
            snapshots: &snaps[s],
            rho0,
            mon: m,
        };
        write_species(
            out,
            &species_dir(out, Problem::Nlis, s + 1),
            &so,
            &cfg.sample_times,
            &mut files,
        )?;
    }
    io::write_system(&out.join("system.csv"), &system)?;
    files.push("system.csv".into());
    finish(out, cfg, system.len().saturating_sub(1), failure, files)
}

/// Barenblatt profiles at the configured sample times (default `0` and `t_end`).
fn write_reference(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let InitialSpec::Barenblatt { t0 } = cfg.initial else {
        return Err(Error::config(
            "initial.kind",
            "the reference needs a barenblatt datum",
        ));
    };
    let profile = BarenblattProfile::new(t0)?;
    let grid = cfg.grid_shape()?;
    let times = if cfg.sample_times.is_empty() {
        vec![0.0, cfg.t_end]
    } else {
        cfg.sample_times.clone()
    };
    let mut files = Vec::new();
    for (k, t) in times.iter().enumerate() {
        let name = format!("barenblatt_{k:03}.csv");
        io::write_grid(&out.join(&name), &profile.grid(*t, grid)?)?;
        files.push(name);
    }
    let index: String = times
        .iter()
        .enumerate()
        .map(|(k, t)| format!("{k},{}\n", io::fmt(*t)))
        .collect();
    std::fs::write(out.join("reference_times.csv"), format!("index,t\n{index}"))?;
    files.push("reference_times.csv".into());
    Ok(files)
}

/// Emits Barenblatt profiles for `cfg` into `out` (the `reference` subcommand).
pub fn reference(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    Ok(write_reference(cfg, out)?
        .into_iter()
        .map(|f| out.join(f))
        .collect())
}

// ---------------------------------------------------------------------------
// Replay

fn read_config(dir: &Path) -> Result<RunConfig> {
    let p = dir.join(CONFIG);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| Error::Integrity(format!("{}: {e}", p.display())))?;
    RunConfig::from_toml_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", p.display())))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    io::read_json(&dir.join(MANIFEST))
}

struct Replayed {
    records: Vec<StepRecord>,
    times: Vec<f64>,
    snapshots: Vec<ParticleMeasure>,
    rho0: GridDensity,
}

fn replay_species(dir: &Path) -> Result<Replayed> {
    let records = io::read_steps(&dir.join("steps.csv"))?;
    let (times, snapshots) = io::read_trajectory(&dir.join("trajectory.csv"))?;
    let rho0 = io::read_grid(&dir.join("initial_density.csv"))?;
    if records.len() != snapshots.len() {
        return Err(Error::Integrity(format!(
            "{}: {} step records but {} snapshots",
            dir.display(),
            records.len(),
            snapshots.len()
        )));
    }
    if records
        .iter()
        .zip(&times)
        .any(|(r, t)| r.t.to_bits() != t.to_bits())
    {
        return Err(Error::Integrity(format!(
            "{}: step times disagree with the trajectory",
            dir.display()
        )));
    }
    Ok(Replayed {
        records,
        times,
        snapshots,
        rho0,
    })
}

fn prefixed(prefix: &str, mut v: Verdict) -> Verdict {
    if !prefix.is_empty() {
        v.name = format!("{prefix}.{}", v.name);
    }
    v
}

fn step_of(cfg: &RunConfig) -> Result<f64> {
    Ok(match cfg.solver {
        Solver::Jko => cfg.step_size()?,
        Solver::Ode => cfg.step_size()? * cfg.ode.record_every as f64,
    })
}

fn species_diagnostics(
    cfg: &RunConfig,
    r: &Replayed,
    v: &MollifierKernel,
    w: &InteractionKernel,
    eps: f64,
) -> Result<(SpeciesDiagnostics, Vec<Verdict>)> {
    let step = step_of(cfg)?;
    let first = r.records[0];
    let l2sq = measures::l2_norm_sq(&r.rho0);
    let h0 = measures::entropy(&r.rho0);
    let m2_bound = diag::moment_bound(first.m2, l2sq, cfg.t_end);
    let (budget_v, h1) = diag::check_entropy_dissipation(&r.records, step, l2sq, h0, m2_bound, v);
    // the species flows carry cross terms; the NLIE weak form applies to nlie only
    let weak_max = if cfg.problem == Problem::Nlie {
        weak_residual_nlie(&r.snapshots, &r.times, w, &cfg.test_functions)?.max
    } else {
        f64::NAN
    };
    let mut verdicts = Vec::new();
    if cfg.problem == Problem::Nlie {
        let tau = (cfg.solver == Solver::Jko).then_some(step);
        verdicts.push(diag::check_energy_monotone(
            &r.records,
            tau,
            cfg.checks.energy_slack,
        ));
        verdicts.push(diag::check_moment_bound(
            &r.records, first.m2, l2sq, cfg.t_end,
        ));
        verdicts.push(diag::check_holder(
            &r.snapshots,
            &r.times,
            first.energy,
            step,
            cfg.checks.holder_samples,
        )?);
        verdicts.push(budget_v);
        verdicts.push(diag::check_entropy_monotone(
            &r.records,
            cfg.checks.entropy_tol,
        ));
    }
    if cfg.solver == Solver::Jko {
        verdicts.push(diag::check_el_residual(&r.records[1..], cfg.jko.tol));
    }
    if cfg.problem == Problem::Nlie {
        verdicts.push(Verdict {
            name: "weak_residual_nlie".into(),
            passed: weak_max.is_finite(),
            value: weak_max,
            limit: f64::INFINITY,
            advisory: true,
            detail: "largest |R_phi(t)| over the test-function family".into(),
        });
    }
    let d = SpeciesDiagnostics {
        eps,
        step,
        n: r.snapshots[0].len(),
        snapshots: r.snapshots.len(),
        w0: first.energy,
        m2_0: first.m2,
        rho0_l2sq: l2sq,
        rho0_entropy: h0,
        m2_bound,
        h1,
        max_el_residual: r.records.iter().map(|x| x.el_residual).fold(0.0, f64::max),
        total_inner_iters: r.records.iter().map(|x| x.inner_iters).sum(),
        weak_residual_max: weak_max,
    };
    Ok((d, verdicts))
}

/// Recomputes every verdict of a completed run from its persisted files.
pub fn evaluate(dir: &Path) -> Result<Evaluation> {
    if !dir.is_dir() {
        return Err(Error::Integrity(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let manifest = read_manifest(dir)?;
    if !manifest.is_complete() {
        return Err(Error::Integrity(format!(
            "run did not complete (failed at step {:?}: {})",
            manifest.failure_step,
            manifest.error.unwrap_or_default()
        )));
    }
    let cfg = read_config(dir)?;
    let eps = single_eps(&cfg)?;
    match cfg.problem {
        Problem::PmeReference => Err(Error::Integrity(
            "reference directories carry no verdicts".into(),
        )),
        Problem::Nlie => {
            let (_, v, w) = self_kernels(cfg.kernel_spec()?, eps)?;
            let r = replay_species(dir)?;
            let (d, verdicts) = species_diagnostics(&cfg, &r, &v, &w, eps)?;
            Ok(Evaluation {
                verdicts,
                diagnostics: DiagnosticsRecord {
                    problem: cfg.problem,
                    solver: cfg.solver,
                    species: vec![d],
                    system: None,
                },
            })
        }
        Problem::Nlis => {
            let (re, v1, v2) = relative_energy_for(&cfg, eps)?;
            let r1 = replay_species(&species_dir(dir, Problem::Nlis, 1))?;
            let r2 = replay_species(&species_dir(dir, Problem::Nlis, 2))?;
            let system = io::read_system(&dir.join("system.csv"))?;
            if system.len() != r1.records.len() || r2.records.len() != r1.records.len() {
                return Err(Error::Integrity(
                    "species and system records disagree in length".into(),
                ));
            }
            let mut verdicts = Vec::new();
            let mut species = Vec::new();
            for (s, (r, v, w)) in [(&r1, &v1, &re.h1), (&r2, &v2, &re.h2)]
                .into_iter()
                .enumerate()
            {
                let (d, vs) = species_diagnostics(&cfg, r, v, w, eps)?;
                verdicts.extend(
                    vs.into_iter()
                        .map(|x| prefixed(&format!("species{}", s + 1), x)),
                );
                species.push(d);
            }
            let a = re.a;
            let c = 0.5 * a.a11.max(a.a22);
            let l2sq = species[0].rho0_l2sq + species[1].rho0_l2sq;
            let m2_0 = species[0].m2_0 + species[1].m2_0;
            let m2_total: Vec<(usize, f64)> = r1
                .records
                .iter()
                .zip(&r2.records)
                .map(|(x, y)| (x.step, x.m2 + y.m2))
                .collect();
            let moment = diag::check_system_moment_bound(&m2_total, m2_0, l2sq, c, cfg.t_end);
            let energy_bound = c * l2sq;
            let worst_h = system
                .iter()
                .map(|r| r.h_energy)
                .fold(f64::NEG_INFINITY, f64::max);
            let slack: f64 = system.iter().map(|r| r.h_increase).sum();
            verdicts.push(species_gap_verdict(&cfg, &system));
            verdicts.push(Verdict {
                name: "system_energy_bound".into(),
                passed: worst_h <= energy_bound * (1.0 + 4.0 * f64::EPSILON),
                value: worst_h,
                limit: energy_bound,
                advisory: false,
                detail: "largest self energy vs c ‖ρ^0‖^2".into(),
            });
            verdicts.push(moment.clone());
            verdicts.push(Verdict {
                name: "proof_slack_dominates".into(),
                passed: slack <= energy_bound,
                value: slack,
                limit: energy_bound,
                advisory: true,
                detail: "cumulative self-energy increase vs the stated energy bound (flag only)"
                    .into(),
            });
            verdicts.push(diag::check_h_increase(&system));
            Ok(Evaluation {
                verdicts,
                diagnostics: DiagnosticsRecord {
                    problem: cfg.problem,
                    solver: cfg.solver,
                    species,
                    system: Some(SystemDiagnostics {
                        energy_bound,
                        moment_bound: moment.limit,
                        observed_slack: slack,
                        max_species_gap: system.iter().map(|r| r.species_gap).fold(0.0, f64::max),
                    }),
                },
            })
        }
    }
}

/// `true` for equal kernels, equal data, `A11 = A22` and `A12 = A21`.
pub fn is_symmetric(cfg: &RunConfig) -> bool {
    let a = match cfg.matrix {
        Some(a) => a,
        None => return false,
    };
    let kernels = cfg.kernel2.is_none() || cfg.kernel2 == cfg.kernel;
    let data = cfg.initial2.is_none() || cfg.initial2.as_ref() == Some(&cfg.initial);
    kernels && data && a.a11 == a.a22 && a.a12 == a.a21
}

/// Species gap; binding only for symmetric set-ups.
fn species_gap_verdict(cfg: &RunConfig, system: &[SystemRecord]) -> Verdict {
    let v = diag::check_species_gap(system, cfg.checks.species_gap);
    if is_symmetric(cfg) {
        v
    } else {
        Verdict {
            advisory: true,
            ..v
        }
    }
}

#[derive(Debug)]
pub struct CheckReport {
    pub evaluation: Evaluation,
    /// Replayed verdict JSON equals the stored `verdicts.json` byte for byte.
    pub identical: bool,
}

impl CheckReport {
    pub fn success(&self) -> bool {
        self.identical && self.evaluation.passed()
    }
}

/// Replays a run directory.
pub fn check(dir: &Path) -> Result<CheckReport> {
    let evaluation = evaluate(dir)?;
    let stored = std::fs::read(dir.join(VERDICTS))
        .map_err(|e| Error::Integrity(format!("{}: {e}", dir.join(VERDICTS).display())))?;
    let mut fresh = serde_json::to_string_pretty(&evaluation.verdicts)?;
    fresh.push('\n');
    Ok(CheckReport {
        identical: fresh.as_bytes() == stored.as_slice(),
        evaluation,
    })
}

// ---------------------------------------------------------------------------
// Sweeps

/// Runs one sweep member into a directory and measures it.
pub type RowRunner<'a> = dyn Fn(&RunConfig, &Path) -> Result<RowMeasurement> + Sync + 'a;

#[derive(Debug)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub excess: Vec<ExcessRow>,
    pub excess_verdicts: Vec<Verdict>,
}

/// Reference profile the sweep error is measured against.
pub fn sweep_reference(cfg: &RunConfig) -> Result<BarenblattProfile> {
    let InitialSpec::Barenblatt { t0 } = cfg.initial else {
        return Err(Error::config(
            "initial.kind",
            "sweeps compare against the Barenblatt solution; use a barenblatt datum",
        ));
    };
    match cfg.problem {
        Problem::Nlis => {
            let a = cfg.matrix()?;
            BarenblattProfile::with_speed(t0, a.a11 + a.a12)
        }
        _ => BarenblattProfile::new(t0),
    }
}

/// Measures a completed run directory on `grid` (sweep metrics).
pub fn measure_row(dir: &Path, grid: GridShape) -> Result<RowMeasurement> {
    let cfg = read_config(dir)?;
    let eps = single_eps(&cfg)?;
    let profile = sweep_reference(&cfg)?;
    let sdir = species_dir(dir, cfg.problem, 1);
    let (_, v, _) = self_kernels(cfg.kernel_spec()?, eps)?;
    let r = replay_species(&sdir)?;
    let e_l2 = diag::l2_error_vs_reference(&r.snapshots, &r.times, &v, grid, &profile)?;
    let step = step_of(&cfg)?;
    let excess = diag::excess_row(eps, &r.snapshots, step, &v, &cfg.test_functions, grid)?;
    io::write_json(&dir.join("excess.json"), &excess)?;
    if let Some(last) = r.snapshots.last() {
        for (f, phi) in cfg.test_functions.iter().enumerate() {
            io::write_excess(
                &dir.join(format!("excess_final_{f}.csv")),
                &excess_term(last, &v, phi, grid)?,
            )?;
        }
    }
    let h1_budget_used = match cfg.problem {
        Problem::Nlie => evaluate(dir)?.diagnostics.species[0].h1.used(),
        _ => f64::NAN,
    };
    Ok(RowMeasurement {
        eps,
        e_l2,
        excess_l1_max: excess.l1_max(),
        excess_l2: excess.l2_max(),
        h1_budget_used,
        excess: Some(excess),
    })
}

/// Default member: [`run`] then [`measure_row`] on the row's grid.
pub fn default_row(cfg: &RunConfig, dir: &Path) -> Result<RowMeasurement> {
    let s = run(cfg, dir)?;
    if !s.manifest.is_complete() {
        return Err(Error::Integrity(format!(
            "row eps = {:?} failed: {}",
            cfg.eps,
            s.manifest.error.unwrap_or_default()
        )));
    }
    measure_row(dir, cfg.grid_shape()?)
}

pub fn row_dir(out: &Path, eps: f64) -> PathBuf {
    out.join(format!("eps_{eps}"))
}

pub fn sweep(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<SweepOutcome> {
    sweep_with(cfg, out, jobs, &default_row)
}

/// Runs every ε of `cfg` (at most `jobs` at a time) on a shared master grid
/// and assembles the report. Failed members are recorded, not fatal.
pub fn sweep_with(
    cfg: &RunConfig,
    out: &Path,
    jobs: usize,
    row: &RowRunner,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.problem == Problem::PmeReference {
        return Err(Error::config(
            "problem",
            "cannot sweep a reference configuration",
        ));
    }
    sweep_reference(cfg)?;
    let master = cfg.grid_shape()?;
    std::fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    let eps = cfg.eps_list();
    let results: Vec<(f64, std::result::Result<RowMeasurement, String>)> = pool.install(|| {
        eps.par_iter()
            .map(|&e| {
                let mut c = cfg.with_eps(e);
                c.grid = GridSpec {
                    a: master.a,
                    b: master.b,
                    m: Some(master.m),
                };
                (e, row(&c, &row_dir(out, e)).map_err(|err| err.to_string()))
            })
            .collect()
    });
    let mut excess: Vec<ExcessRow> = results
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().and_then(|m| m.excess.clone()))
        .collect();
    excess.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let report = diag::assemble_sweep(results);
    let excess_verdicts = if excess.len() >= 2 {
        diag::check_excess_decay(&excess, (0.4, 0.6))
    } else {
        Vec::new()
    };
    io::write_sweep(&out.join("sweep_report.csv"), &report)?;
    io::write_json(&out.join("sweep_report.json"), &report)?;
    io::write_excess_table(&out.join("excess_table.csv"), &excess, &cfg.test_functions)?;
    io::write_json(&out.join("excess_verdicts.json"), &excess_verdicts)?;
    Ok(SweepOutcome {
        report,
        excess,
        excess_verdicts,
    })
}
