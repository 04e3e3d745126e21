//! The unit-mass Barenblatt solution of `ρ_t = 1/2 (ρ^2)_xx` and weak-form
//! residuals for grid and particle trajectories.
//!
//! The standard `m = 2` source solution of `u_s = (u^2)_xx` is
//! `u(s, x) = s^{-1/3} (C - x^2 / (12 s^{2/3}))_+` with `C = 3^{1/3}/4` for unit
//! mass. The factor 1/2 is absorbed by the dilation `s = (a t + t0)/2`, where
//! `a` is an optional speed (`a = 1` for the plain equation; a cross-diffusion
//! system with equal species behaves like speed `A11 + A12`).

use serde::{Deserialize, Serialize};

use crate::energy::TestFunction;
use crate::kernels::{EvenKernel, InteractionKernel};
use crate::measures::{GridDensity, GridShape, ParticleMeasure};
use crate::quad::trapezoid;
use crate::{Error, Result};

/// Height constant fixing unit mass.
pub fn barenblatt_constant() -> f64 {
    3f64.cbrt() / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarenblattProfile {
    pub t0: f64,
    pub speed: f64,
}

impl BarenblattProfile {
    pub fn new(t0: f64) -> Result<Self> {
        Self::with_speed(t0, 1.0)
    }

    pub fn with_speed(t0: f64, speed: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::param("initial.t0", "must be positive"));
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::param("speed", "must be positive"));
        }
        Ok(Self { t0, speed })
    }

    fn s(&self, t: f64) -> Result<f64> {
        let u = self.speed * t + self.t0;
        if !(u > 0.0) {
            return Err(Error::Domain(format!(
                "Barenblatt needs t + t0 > 0, got t = {t}"
            )));
        }
        Ok(0.5 * u)
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        let s = self.s(t)?;
        let c = barenblatt_constant();
        let q = c - x * x / (12.0 * s.powf(2.0 / 3.0));
        Ok(if q > 0.0 { q / s.cbrt() } else { 0.0 })
    }

    /// Support half-width `s^{1/3} sqrt(12 C)`.
    pub fn half_width(&self, t: f64) -> Result<f64> {
        Ok(self.s(t)?.cbrt() * (12.0 * barenblatt_constant()).sqrt())
    }

    /// Maximum value `C s^{-1/3}`.
    pub fn peak(&self, t: f64) -> Result<f64> {
        Ok(barenblatt_constant() / self.s(t)?.cbrt())
    }

    /// Second moment `4 C Y^3 s^{2/3} / 15`, `Y = sqrt(12 C)`.
    pub fn second_moment(&self, t: f64) -> Result<f64> {
        let c = barenblatt_constant();
        let y = (12.0 * c).sqrt();
        Ok(4.0 * c * y.powi(3) / 15.0 * self.s(t)?.powf(2.0 / 3.0))
    }

    /// Exact `∫ ρ^2` at time `t`: `s^{-1/3} ∫ (C - y^2/12)^2 dy`.
    pub fn l2_norm_sq(&self, t: f64) -> Result<f64> {
        let c = barenblatt_constant();
        let y = (12.0 * c).sqrt();
        // ∫_{-Y}^{Y} (C - y^2/12)^2 dy = 2 (C^2 Y - C Y^3/18 + Y^5/720)
        let i = 2.0 * (c * c * y - c * y.powi(3) / 18.0 + y.powi(5) / 720.0);
        Ok(i / self.s(t)?.cbrt())
    }

    /// Sampled and renormalised on `shape`; the support must fit in the grid.
    pub fn grid(&self, t: f64, shape: GridShape) -> Result<GridDensity> {
        let w = self.half_width(t)?;
        if -w < shape.a || w > shape.b {
            return Err(Error::Coverage {
                a: shape.a,
                b: shape.b,
                min: -w,
                max: w,
            });
        }
        self.raw_grid(t, shape)?.normalized()
    }

    /// Sampled without renormalisation (exact pointwise values).
    pub fn raw_grid(&self, t: f64, shape: GridShape) -> Result<GridDensity> {
        self.s(t)?;
        GridDensity::from_fn(shape, |x| self.value(t, x).unwrap_or(0.0))
    }
}

pub fn barenblatt(t: f64, x: f64, t0: f64) -> Result<f64> {
    BarenblattProfile::new(t0)?.value(t, x)
}

pub fn barenblatt_grid(t: f64, t0: f64, shape: GridShape) -> Result<GridDensity> {
    BarenblattProfile::new(t0)?.grid(t, shape)
}

/// Weak-form residuals `R_φ(t_k)` for each test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormResidual {
    pub times: Vec<f64>,
    pub per_function: Vec<Vec<f64>>,
    pub max: f64,
}

fn assemble(times: &[f64], integrals: Vec<Vec<f64>>, fluxes: Vec<Vec<f64>>) -> WeakFormResidual {
    let per_function: Vec<Vec<f64>> = integrals
        .iter()
        .zip(&fluxes)
        .map(|(ints, flux)| {
            let mut acc = 0.0;
            let mut r = Vec::with_capacity(times.len());
            for k in 0..times.len() {
                if k > 0 {
                    // left-endpoint rule
                    acc += (times[k] - times[k - 1]) * flux[k - 1];
                }
                r.push(ints[k] - ints[0] + acc);
            }
            r
        })
        .collect();
    let max = per_function
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    WeakFormResidual {
        times: times.to_vec(),
        per_function,
        max,
    }
}

fn check_times(n: usize, times: &[f64]) -> Result<()> {
    if n != times.len() || n == 0 {
        return Err(Error::param("times", "need one time per snapshot"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("times", "must be strictly increasing"));
    }
    Ok(())
}

/// `R(t) = ∫φ v(t) - ∫φ v(0) + ∫_0^t ∫ v ∇φ·∇v dx ds`.
pub fn weak_residual_pme(
    snapshots: &[GridDensity],
    times: &[f64],
    testfns: &[TestFunction],
) -> Result<WeakFormResidual> {
    check_times(snapshots.len(), times)?;
    let shape = snapshots[0].shape();
    if snapshots.iter().any(|s| s.shape() != shape) {
        return Err(Error::param("grid", "snapshots must share a grid"));
    }
    for phi in testfns {
        let (lo, hi) = phi.support();
        if lo < shape.a || hi > shape.b {
            return Err(Error::param(
                "test_functions",
                format!("{phi} is not supported inside the grid"),
            ));
        }
    }
    let xs = shape.nodes();
    let dx = shape.dx();
    let mut integrals = vec![Vec::with_capacity(times.len()); testfns.len()];
    let mut fluxes = vec![Vec::with_capacity(times.len()); testfns.len()];
    for v in snapshots {
        let g = v.gradient();
        for (f, phi) in testfns.iter().enumerate() {
            integrals[f].push(v.integrate_against(|x| phi.value(x)));
            let w: Vec<f64> = (0..shape.m)
                .map(|k| v.values()[k] * phi.grad(xs[k]) * g[k])
                .collect();
            fluxes[f].push(trapezoid(&w, dx));
        }
    }
    Ok(assemble(times, integrals, fluxes))
}

/// `R(t) = <φ, μ_t> - <φ, μ_0> + 1/2 ∫_0^t (1/N^2) ΣΣ (∇φ(X_i) - ∇φ(X_j)) ∇W(X_i - X_j) ds`.
pub fn weak_residual_nlie(
    snapshots: &[ParticleMeasure],
    times: &[f64],
    w: &InteractionKernel,
    testfns: &[TestFunction],
) -> Result<WeakFormResidual> {
    check_times(snapshots.len(), times)?;
    if snapshots.iter().any(|s| s.dim() != 1) {
        return Err(Error::Unsupported(
            "weak residuals of 2-D particle runs".into(),
        ));
    }
    let radius = w.support_radius();
    let mut integrals = vec![Vec::with_capacity(times.len()); testfns.len()];
    let mut fluxes = vec![Vec::with_capacity(times.len()); testfns.len()];
    for mu in snapshots {
        let x = mu.coords();
        let n = x.len() as f64;
        for (f, phi) in testfns.iter().enumerate() {
            let g: Vec<f64> = x.iter().map(|&xi| phi.grad(xi)).collect();
            integrals[f].push(x.iter().map(|&xi| phi.value(xi)).sum::<f64>() / n);
            // half the ordered double sum equals the sum over unordered pairs
            let mut s = 0.0;
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    let d = x[i] - x[j];
                    if -d > radius {
                        break;
                    }
                    s += (g[i] - g[j]) * w.deriv1(d);
                }
            }
            fluxes[f].push(s / (n * n));
        }
    }
    Ok(assemble(times, integrals, fluxes))
}
