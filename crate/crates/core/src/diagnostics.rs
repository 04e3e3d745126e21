//! Verdicts computed from recorded trajectories.
//!
//! Every check here is a pure function of step records and particle snapshots,
//! so replaying persisted artifacts reproduces the original verdicts exactly.

use serde::{Deserialize, Serialize};

use crate::energy::{excess_l1_bound, excess_term, TestFunction};
use crate::jko::{StepRecord, SystemRecord};
use crate::kernels::EvenKernel;
use crate::measures::{self, GridShape, ParticleMeasure};
use crate::reference::BarenblattProfile;
use crate::{Error, Result};

/// Outcome of a single check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    /// The checked quantity (worst case).
    pub value: f64,
    /// Its admissible limit.
    pub limit: f64,
    /// Advisory checks are reported but never fail a run.
    #[serde(default)]
    pub advisory: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, value: f64, limit: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value,
            limit,
            advisory: false,
            detail,
        }
    }

    fn advisory(mut self) -> Self {
        self.advisory = true;
        self
    }
}

/// `true` iff every non-advisory verdict passed.
pub fn all_passed(vs: &[Verdict]) -> bool {
    vs.iter().all(|v| v.passed || v.advisory)
}

/// Step inequality `E_{n+1} + d_W^2/(2τ) <= E_n + slack`; with `tau = None`
/// only `E_{n+1} <= E_n + slack` (for ODE runs).
pub fn check_energy_monotone(records: &[StepRecord], tau: Option<f64>, slack: f64) -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    for w in records.windows(2) {
        let transport = tau.map_or(0.0, |t| w[1].dw2_increment / (2.0 * t));
        let excess = w[1].energy + transport - w[0].energy;
        if excess > worst {
            worst = excess;
            at = w[1].step;
        }
    }
    if records.len() < 2 {
        worst = 0.0;
    }
    let name = if tau.is_some() {
        "energy_step_inequality"
    } else {
        "energy_monotone"
    };
    Verdict::new(
        name,
        worst <= slack,
        worst,
        slack,
        format!("worst step {at}"),
    )
}

/// `m_2(t) <= 2 m_2(ρ0) + 2 T ‖V1‖_1^2 ‖ρ0‖_2^2` with `‖V1‖_1 = 1`.
pub fn moment_bound(m2_0: f64, rho0_l2sq: f64, horizon: f64) -> f64 {
    2.0 * m2_0 + 2.0 * horizon * rho0_l2sq
}

fn check_bound_series(
    name: &str,
    values: impl Iterator<Item = (usize, f64)>,
    bound: f64,
) -> Verdict {
    let roundoff = 4.0 * f64::EPSILON * bound.abs();
    let (mut worst, mut at) = (f64::NEG_INFINITY, 0);
    for (step, v) in values {
        if v > worst {
            worst = v;
            at = step;
        }
    }
    Verdict::new(
        name,
        worst <= bound + roundoff,
        worst,
        bound,
        format!("largest at step {at}"),
    )
}

pub fn check_moment_bound(
    records: &[StepRecord],
    m2_0: f64,
    rho0_l2sq: f64,
    horizon: f64,
) -> Verdict {
    check_bound_series(
        "moment_bound",
        records.iter().map(|r| (r.step, r.m2)),
        moment_bound(m2_0, rho0_l2sq, horizon),
    )
}

/// Two-species bound `m_2(t) <= 2 m_2(ρ^0) + 4 c T ‖ρ^0‖^2`,
/// `c = max{A11/2, A22/2}` (unit-mass mollifiers). `m2` sums both species.
pub fn check_system_moment_bound(
    m2_total: &[(usize, f64)],
    m2_0: f64,
    rho0_l2sq: f64,
    c: f64,
    horizon: f64,
) -> Verdict {
    check_bound_series(
        "system_moment_bound",
        m2_total.iter().copied(),
        2.0 * m2_0 + 4.0 * c * horizon * rho0_l2sq,
    )
}

/// `d_W(ρ_s, ρ_t) <= c (sqrt|t-s| + sqrt τ)` over all pairs of `samples`
/// evenly spaced snapshots, with `c = sqrt(2 𝒲[ρ0])`.
pub fn check_holder(
    snapshots: &[ParticleMeasure],
    times: &[f64],
    w0: f64,
    tau: f64,
    samples: usize,
) -> Result<Verdict> {
    if snapshots.len() != times.len() || snapshots.is_empty() {
        return Err(Error::param("times", "need one time per snapshot"));
    }
    let c = (2.0 * w0).sqrt();
    let k = snapshots.len();
    let m = samples.clamp(1, k);
    let idx: Vec<usize> = if m == 1 {
        vec![0]
    } else {
        (0..m)
            .map(|j| (j * (k - 1) + (m - 1) / 2) / (m - 1))
            .collect()
    };
    let mut worst_ratio: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = measures::wasserstein2_1d(&snapshots[i], &snapshots[j])?.sqrt();
            let bound = c * ((times[j] - times[i]).abs().sqrt() + tau.sqrt());
            worst_ratio = worst_ratio.max(d / bound);
        }
    }
    Ok(Verdict::new(
        "holder_continuity",
        worst_ratio <= 1.0,
        worst_ratio,
        1.0,
        format!("c = {c:.6e}, worst d_W / bound over {m} sampled times"),
    ))
}

/// Largest Euler–Lagrange residual over accepted steps vs the inner tolerance.
pub fn check_el_residual(records: &[StepRecord], tol: f64) -> Verdict {
    check_bound_series(
        "euler_lagrange_residual",
        records.iter().map(|r| (r.step, r.el_residual)),
        tol,
    )
}

/// Split of the `∫‖∇v‖^2 dt` budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H1Budget {
    /// `∫_0^T ‖∇v_ε‖^2 dt` (left-endpoint).
    pub integral: f64,
    /// `‖ρ0‖^2 + C*`.
    pub budget: f64,
    pub rho0_l2sq: f64,
    /// `ℋ[ρ0] - inf_t ℋ[v_ε(t)]`.
    pub entropy_drop: f64,
    /// `inf_t ℋ[v_ε(t)] - H_floor`, the entropy floor margin from the moment bound.
    pub floor_margin: f64,
    pub entropy_floor: f64,
}

impl H1Budget {
    pub fn used(&self) -> f64 {
        self.integral / self.budget
    }
}

/// In 1-D, `ℋ[v] >= -1/2 log(2πe m_2(v))`; `m2` bounds the second moment of `v`.
pub fn entropy_floor(m2: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * m2).ln()
}

/// `∫_0^T ‖∇v_ε‖^2 dt <= ‖ρ0‖^2 + C*`,
/// `C* = (ℋ[ρ0] - inf ℋ[v_ε]) + (inf ℋ[v_ε] - H_floor)`, where the floor uses
/// the moment bound plus the mollifier's own second moment.
pub fn check_entropy_dissipation(
    records: &[StepRecord],
    tau: f64,
    rho0_l2sq: f64,
    rho0_entropy: f64,
    m2_bound: f64,
    v_eps: &dyn EvenKernel,
) -> (Verdict, H1Budget) {
    let steps = records.len().saturating_sub(1);
    let integral: f64 = records[..steps].iter().map(|r| tau * r.h1_v).sum();
    let inf_h = records
        .iter()
        .map(|r| r.entropy_v)
        .fold(f64::INFINITY, f64::min);
    let floor = entropy_floor(m2_bound + v_eps.second_moment());
    let budget = H1Budget {
        integral,
        rho0_l2sq,
        entropy_drop: rho0_entropy - inf_h,
        floor_margin: inf_h - floor,
        entropy_floor: floor,
        budget: rho0_l2sq + (rho0_entropy - inf_h) + (inf_h - floor),
    };
    let v = Verdict::new(
        "entropy_dissipation_budget",
        budget.integral <= budget.budget,
        budget.integral,
        budget.budget,
        format!(
            "entropy drop {:.6e}, floor margin {:.6e}, budget used {:.3}",
            budget.entropy_drop,
            budget.floor_margin,
            budget.used()
        ),
    );
    (v, budget)
}

/// `ℋ[v_ε(t_n)]` nonincreasing up to `tol`.
pub fn check_entropy_monotone(records: &[StepRecord], tol: f64) -> Verdict {
    let worst = records
        .windows(2)
        .map(|w| w[1].entropy_v - w[0].entropy_v)
        .fold(0.0, f64::max);
    Verdict::new(
        "entropy_nonincreasing",
        worst <= tol,
        worst,
        tol,
        String::new(),
    )
}

/// Two-species symmetric reduction: species stay identical.
pub fn check_species_gap(system: &[SystemRecord], tol: f64) -> Verdict {
    check_bound_series(
        "species_identical",
        system.iter().map(|r| (r.step, r.species_gap)),
        tol,
    )
}

/// Records the largest per-step increase of ℋ_ε (reported, never failing).
pub fn check_h_increase(system: &[SystemRecord]) -> Verdict {
    let worst = system.iter().map(|r| r.h_increase).fold(0.0, f64::max);
    Verdict::new(
        "self_energy_increase",
        true,
        worst,
        f64::INFINITY,
        "largest per-step increase of the self energy".into(),
    )
    .advisory()
}

// ---------------------------------------------------------------------------
// Excess fields over ε

/// Excess statistics of one run for every test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessRow {
    pub eps: f64,
    /// `sup_t ‖z(t)‖_1` per test function.
    pub sup_l1: Vec<f64>,
    /// `ε ‖D²φ‖_∞ ∫|z|V1` per test function.
    pub bound: Vec<f64>,
    /// `‖z‖_{L²([0,T] x grid)}` per test function (left-endpoint in time).
    pub l2: Vec<f64>,
}

impl ExcessRow {
    pub fn l1_max(&self) -> f64 {
        self.sup_l1.iter().copied().fold(0.0, f64::max)
    }

    pub fn l2_max(&self) -> f64 {
        self.l2.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates excess fields along a trajectory.
pub fn excess_row(
    eps: f64,
    snapshots: &[ParticleMeasure],
    tau: f64,
    v_eps: &dyn EvenKernel,
    testfns: &[TestFunction],
    grid: GridShape,
) -> Result<ExcessRow> {
    let mut sup_l1 = vec![0.0f64; testfns.len()];
    let mut l2sq = vec![0.0f64; testfns.len()];
    let last = snapshots.len().saturating_sub(1);
    for (n, mu) in snapshots.iter().enumerate() {
        for (f, phi) in testfns.iter().enumerate() {
            let z = excess_term(mu, v_eps, phi, grid)?;
            sup_l1[f] = sup_l1[f].max(z.l1);
            if n < last {
                l2sq[f] += tau * z.l2 * z.l2;
            }
        }
    }
    Ok(ExcessRow {
        eps,
        sup_l1,
        bound: testfns
            .iter()
            .map(|phi| excess_l1_bound(v_eps, phi))
            .collect(),
        l2: l2sq.iter().map(|v| v.sqrt()).collect(),
    })
}

/// Three verdicts: the L¹ bound for every run and test function, consecutive
/// L¹ ratios inside `ratio_window`, and strictly decreasing L² norms.
pub fn check_excess_decay(rows: &[ExcessRow], ratio_window: (f64, f64)) -> Vec<Verdict> {
    let mut rows: Vec<&ExcessRow> = rows.iter().collect();
    rows.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let worst_bound = rows
        .iter()
        .flat_map(|r| r.sup_l1.iter().zip(&r.bound).map(|(l, b)| l / b))
        .fold(0.0, f64::max);
    let mut ratios = Vec::new();
    let mut l2_ok = true;
    let mut worst_l2 = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        for f in 0..w[0].sup_l1.len() {
            ratios.push(w[1].sup_l1[f] / w[0].sup_l1[f]);
            let q = w[1].l2[f] / w[0].l2[f];
            worst_l2 = worst_l2.max(q);
            l2_ok &= w[1].l2[f] < w[0].l2[f];
        }
    }
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(*r), b.max(*r))
        });
    let ratio_ok = !ratios.is_empty() && lo >= ratio_window.0 && hi <= ratio_window.1;
    let ratio_detail = ratios
        .iter()
        .map(|r| format!("{r:.4}"))
        .collect::<Vec<_>>()
        .join(",");
    vec![
        Verdict::new(
            "excess_l1_bound",
            worst_bound <= 1.0,
            worst_bound,
            1.0,
            "worst sup_t ‖z‖_1 / (ε ‖D²φ‖ ∫|z|V1)".into(),
        ),
        Verdict::new(
            "excess_l1_ratio",
            ratio_ok,
            hi,
            ratio_window.1,
            format!(
                "ratios [{ratio_detail}] must lie in [{}, {}]",
                ratio_window.0, ratio_window.1
            ),
        ),
        Verdict::new(
            "excess_l2_decreasing",
            l2_ok && rows.len() >= 2,
            worst_l2,
            1.0,
            "largest consecutive ratio of ‖z‖_{L²(0,T;L²)}".into(),
        ),
    ]
}

// ---------------------------------------------------------------------------
// ε sweeps

/// `(∫_0^T ‖v_ε(t) - ρ_ref(t)‖^2 dt)^{1/2}` with left-endpoint time quadrature.
pub fn l2_error_vs_reference(
    snapshots: &[ParticleMeasure],
    times: &[f64],
    v_eps: &dyn EvenKernel,
    grid: GridShape,
    reference: &BarenblattProfile,
) -> Result<f64> {
    let mut acc = 0.0;
    for k in 0..snapshots.len().saturating_sub(1) {
        let v = measures::mollify(&snapshots[k], v_eps, grid)?;
        let r = reference.raw_grid(times[k], grid)?;
        acc += (times[k + 1] - times[k]) * measures::l2_distance_sq(&v, &r)?;
    }
    Ok(acc.sqrt())
}

/// One row of a sweep, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    #[serde(rename = "E_l2")]
    pub e_l2: f64,
    pub ratio_prev: f64,
    pub excess_l1_max: f64,
    pub excess_l2: f64,
    pub h1_budget_used: f64,
    pub verdict: String,
}

/// Measurements of a completed sweep member (before assembly).
#[derive(Debug, Clone, PartialEq)]
pub struct RowMeasurement {
    pub eps: f64,
    pub e_l2: f64,
    pub excess_l1_max: f64,
    pub excess_l2: f64,
    pub h1_budget_used: f64,
    pub excess: Option<ExcessRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub passed: bool,
}

/// Sorts by ε descending, fills ratios and per-row verdicts. `Err` rows are
/// marked failed; passing requires strictly decreasing `E` and no failures.
pub fn assemble_sweep(
    rows: Vec<(f64, std::result::Result<RowMeasurement, String>)>,
) -> SweepReport {
    let mut rows = rows;
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::with_capacity(rows.len());
    let mut prev: Option<f64> = None;
    let mut passed = !rows.is_empty();
    for (eps, res) in rows {
        match res {
            Ok(m) => {
                let ratio = prev.map_or(f64::NAN, |p| m.e_l2 / p);
                let ok = prev.map_or(true, |p| m.e_l2 < p);
                passed &= ok;
                prev = Some(m.e_l2);
                out.push(SweepRow {
                    eps,
                    e_l2: m.e_l2,
                    ratio_prev: ratio,
                    excess_l1_max: m.excess_l1_max,
                    excess_l2: m.excess_l2,
                    h1_budget_used: m.h1_budget_used,
                    verdict: if ok { "pass" } else { "fail" }.into(),
                });
            }
            Err(msg) => {
                log::error!("sweep row eps = {eps} failed: {msg}");
                passed = false;
                out.push(SweepRow {
                    eps,
                    e_l2: f64::NAN,
                    ratio_prev: f64::NAN,
                    excess_l1_max: f64::NAN,
                    excess_l2: f64::NAN,
                    h1_budget_used: f64::NAN,
                    verdict: "failed".into(),
                });
            }
        }
    }
    SweepReport { rows: out, passed }
}
