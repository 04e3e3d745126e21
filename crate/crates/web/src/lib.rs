//! Browser bindings: kernel profiles, a small JKO run against the Barenblatt
//! solution, and the excess field of a test function.

use nlpme_core::energy::{excess_term, InteractionEnergy, TestFunction};
use nlpme_core::jko::{solve_nlie_jko_from, JkoConfig, Monitor};
use nlpme_core::kernels::{
    make_gaussian, make_laplace, scale, self_convolve, EvenKernel, MollifierKernel,
};
use nlpme_core::measures::{l2_distance_sq, mollify, quantiles_from_density, GridShape};
use nlpme_core::reference::BarenblattProfile;
use nlpme_core::{Error, Result};
use wasm_bindgen::prelude::*;

/// Sampled curves on a common abscissa.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Plot {
    x: Vec<f64>,
    series: Vec<(String, Vec<f64>)>,
    note: String,
}

#[wasm_bindgen]
impl Plot {
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    pub fn count(&self) -> usize {
        self.series.len()
    }

    pub fn label(&self, i: usize) -> String {
        self.series.get(i).map(|s| s.0.clone()).unwrap_or_default()
    }

    pub fn values(&self, i: usize) -> Vec<f64> {
        self.series.get(i).map(|s| s.1.clone()).unwrap_or_default()
    }

    pub fn note(&self) -> String {
        self.note.clone()
    }
}

fn err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn mollifier(family: &str, eps: f64) -> Result<MollifierKernel> {
    let base = match family {
        "gaussian" => make_gaussian(1.0, 1)?,
        "laplace" => make_laplace(1.0, 1)?,
        other => return Err(Error::Unsupported(format!("kernel family `{other}`"))),
    };
    scale(&base, eps)
}

/// `V_ε` and `W_ε = V_ε * V_ε` on `[-half_width, half_width]`.
pub fn kernel_profiles_plot(
    family: &str,
    eps: f64,
    half_width: f64,
    points: usize,
) -> Result<Plot> {
    let v = mollifier(family, eps)?;
    let w = self_convolve(&v)?;
    let shape = GridShape::new(-half_width, half_width, points.max(3))?;
    let x = shape.nodes();
    Ok(Plot {
        series: vec![
            ("V_eps".into(), x.iter().map(|&z| v.eval1(z)).collect()),
            ("W_eps".into(), x.iter().map(|&z| w.eval1(z)).collect()),
        ],
        note: format!(
            "W_eps(0) = {:.6}, second moment of W_eps = {:.6}",
            w.eval1(0.0),
            w.second_moment()
        ),
        x,
    })
}

/// JKO run from the Barenblatt datum `t0 = 1`; returns `v_ε(T)` and the exact
/// profile at `T` on `[-4, 4]`.
pub fn jko_vs_barenblatt_plot(
    family: &str,
    eps: f64,
    n: usize,
    tau: f64,
    t_end: f64,
) -> Result<Plot> {
    let v = mollifier(family, eps)?;
    let w = self_convolve(&v)?;
    let profile = BarenblattProfile::new(1.0)?;
    let shape = GridShape::with_spacing(-4.0, 4.0, (eps / 5.0).min(0.02))?;
    let rho0 = profile.grid(0.0, shape)?;
    let mu0 = quantiles_from_density(&rho0, n)?;
    let mon = Monitor {
        v_eps: v.clone(),
        grid: shape,
        record_wall_time: false,
    };
    let traj = solve_nlie_jko_from(
        mu0,
        &JkoConfig::new(tau, t_end),
        &InteractionEnergy::new(w),
        &mon,
    )?;
    if let Some(e) = traj.failure {
        return Err(e);
    }
    let last = traj
        .snapshots
        .last()
        .expect("initial snapshot is always present");
    let t = traj.times().last().copied().unwrap_or(0.0);
    let dens = mollify(last, &v, shape)?;
    let exact = profile.grid(t, shape)?;
    let e = l2_distance_sq(&dens, &exact)?.sqrt();
    Ok(Plot {
        x: shape.nodes(),
        series: vec![
            ("v_eps(T)".into(), dens.values().to_vec()),
            ("Barenblatt(T)".into(), exact.values().to_vec()),
        ],
        note: format!(
            "{} steps, ‖v_eps(T) - rho(T)‖_L2 = {e:.4e}",
            traj.records.len() - 1
        ),
    })
}

/// Excess field `z_ε` of a bump test function for the Barenblatt datum.
pub fn excess_profile_plot(
    family: &str,
    eps: f64,
    n: usize,
    center: f64,
    width: f64,
) -> Result<Plot> {
    let v = mollifier(family, eps)?;
    let profile = BarenblattProfile::new(1.0)?;
    let shape = GridShape::with_spacing(-4.0, 4.0, (eps / 10.0).min(0.01))?;
    let mu = quantiles_from_density(&profile.grid(0.0, shape)?, n)?;
    let phi = TestFunction::bump(center, width)?;
    let z = excess_term(&mu, &v, &phi, shape)?;
    // ε ∫|z| V_1 = ∫|z| V_ε
    let bound = phi.hess_sup() * v.first_abs_moment();
    Ok(Plot {
        x: shape.nodes(),
        series: vec![("z_eps".into(), z.values.clone())],
        note: format!(
            "‖z‖_L1 = {:.4e} <= {bound:.4e}, ‖z‖_L2 = {:.4e}",
            z.l1, z.l2
        ),
    })
}

// ---------------------------------------------------------------------------
// JavaScript entry points

#[wasm_bindgen]
pub fn kernel_profiles(
    family: &str,
    eps: f64,
    half_width: f64,
    points: usize,
) -> std::result::Result<Plot, JsError> {
    kernel_profiles_plot(family, eps, half_width, points).map_err(err)
}

#[wasm_bindgen]
pub fn jko_vs_barenblatt(
    family: &str,
    eps: f64,
    n: usize,
    tau: f64,
    t_end: f64,
) -> std::result::Result<Plot, JsError> {
    jko_vs_barenblatt_plot(family, eps, n, tau, t_end).map_err(err)
}

#[wasm_bindgen]
pub fn excess_profile(
    family: &str,
    eps: f64,
    n: usize,
    center: f64,
    width: f64,
) -> std::result::Result<Plot, JsError> {
    excess_profile_plot(family, eps, n, center, width).map_err(err)
}
