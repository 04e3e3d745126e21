//! Mollifiers `V`, cross weights `U` and interaction kernels `W = V*V`,
//! `K = V_i*U*V_j`.
//!
//! Every kernel here is even and radial, so evaluation goes through a radial
//! profile `p(r)`, `r = |x|`. Gradients at exactly `x = 0` are reported as zero.
//! Closed forms are used where they exist (Gaussian families, Laplace pairs);
//! everything else is tabulated on the half line by numerical convolution and
//! cubic Hermite interpolation with exact node derivatives.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::quad;
use crate::{Error, Result};

/// Value below which (relative to the peak) a kernel is treated as zero when
/// truncating pair sums.
const TAIL_CUTOFF: f64 = 1e-16;

/// Common interface of even, radial probability kernels.
pub trait EvenKernel: Send + Sync {
    fn dim(&self) -> usize;
    /// Radial profile `p(r)`, `r >= 0`.
    fn profile(&self, r: f64) -> f64;
    /// `dp/dr` for `r > 0`; at `r = 0` the right derivative.
    fn profile_deriv(&self, r: f64) -> f64;
    /// `∫ |x| K(x) dx`.
    fn first_abs_moment(&self) -> f64;
    /// `∫ |x|^2 K(x) dx`.
    fn second_moment(&self) -> f64;
    /// Radius beyond which the kernel is below `1e-16` of its peak.
    fn support_radius(&self) -> f64;

    fn profile_and_deriv(&self, r: f64) -> (f64, f64) {
        (self.profile(r), self.profile_deriv(r))
    }

    /// 1-D evaluation.
    fn eval1(&self, x: f64) -> f64 {
        self.profile(x.abs())
    }

    /// 1-D derivative; odd, exactly zero at the origin.
    fn deriv1(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else if x > 0.0 {
            self.profile_deriv(x)
        } else {
            -self.profile_deriv(-x)
        }
    }

    /// Value and derivative in 1-D.
    fn eval_deriv1(&self, x: f64) -> (f64, f64) {
        if x == 0.0 {
            (self.profile(0.0), 0.0)
        } else {
            let (v, d) = self.profile_and_deriv(x.abs());
            (v, if x > 0.0 { d } else { -d })
        }
    }

    /// Evaluation at a `dim()`-vector.
    fn eval(&self, x: &[f64]) -> f64 {
        self.profile(norm(x))
    }

    /// Gradient at a `dim()`-vector; the zero vector at the origin.
    fn eval_grad(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        if r == 0.0 {
            return vec![0.0; x.len()];
        }
        let dp = self.profile_deriv(r);
        x.iter().map(|xi| dp * xi / r).collect()
    }
}

fn norm(x: &[f64]) -> f64 {
    match x {
        [a] => a.abs(),
        [a, b] => a.hypot(*b),
        _ => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 1 || d == 2 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("dimension {d} (only 1 and 2)")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            name,
            format!("must be a positive finite number, got {v}"),
        ))
    }
}

// ---------------------------------------------------------------------------
// Sampled (custom) profiles

/// A user-supplied even kernel, piecewise linear between samples on the half line.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    xs: Vec<f64>,
    vs: Vec<f64>,
    raw_mass: f64,
}

impl SampledProfile {
    /// Validates samples against the standing kernel assumptions and renormalises.
    ///
    /// `xs` must be strictly increasing and contain `0`. Negative abscissae,
    /// if present, must mirror the positive half.
    pub fn from_samples(xs: &[f64], vs: &[f64]) -> Result<Self> {
        if xs.len() != vs.len() {
            return Err(Error::KernelSamples(
                "x and value columns differ in length".into(),
            ));
        }
        if xs.len() < 3 {
            return Err(Error::KernelSamples("need at least 3 samples".into()));
        }
        if xs.iter().chain(vs).any(|v| !v.is_finite()) {
            return Err(Error::KernelSamples("non-finite sample".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::KernelSamples("x must be strictly increasing".into()));
        }
        if let Some(v) = vs.iter().find(|v| **v < 0.0) {
            return Err(Error::KernelSamples(format!("negative value {v}")));
        }
        let i0 = xs
            .iter()
            .position(|&x| x == 0.0)
            .ok_or_else(|| Error::KernelSamples("samples must include x = 0".into()))?;
        let peak = vs[i0];
        if !(peak > 0.0) {
            return Err(Error::KernelSamples("value at 0 must be positive".into()));
        }
        if let Some(k) = vs.iter().position(|&v| v > peak * (1.0 + 1e-12)) {
            return Err(Error::KernelSamples(format!(
                "kernel must be bounded by its value at 0 (x = {} exceeds it)",
                xs[k]
            )));
        }
        let half_x: Vec<f64> = xs[i0..].to_vec();
        let half_v: Vec<f64> = vs[i0..].to_vec();
        if half_x.len() < 3 {
            return Err(Error::KernelSamples(
                "need at least 3 samples with x >= 0".into(),
            ));
        }
        let tail = *half_v.last().unwrap();
        if tail > 1e-8 * peak {
            return Err(Error::KernelSamples(format!(
                "samples must decay to zero at the boundary (last value {tail:e})"
            )));
        }
        let raw = Self {
            raw_mass: 1.0,
            xs: half_x,
            vs: half_v,
        };
        // evenness: every negative sample must match the mirrored positive half
        for k in 0..i0 {
            let mirrored = raw.profile(-xs[k]);
            if (mirrored - vs[k]).abs() > 1e-8 * peak {
                return Err(Error::KernelSamples(format!(
                    "kernel is not even: V({}) = {} but V({}) = {}",
                    xs[k], vs[k], -xs[k], mirrored
                )));
            }
        }
        let mass =
            2.0 * quad::composite(&|r| raw.profile(r), 0.0, raw.edge(), &raw.xs, f64::INFINITY);
        if (mass - 1.0).abs() > 1e-3 {
            return Err(Error::KernelSamples(format!(
                "total mass {mass} differs from 1 by more than 1e-3"
            )));
        }
        Ok(Self {
            vs: raw.vs.iter().map(|v| v / mass).collect(),
            xs: raw.xs,
            raw_mass: mass,
        })
    }

    /// Reads a two-column CSV with header `x,value`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let (xs, vs) = crate::io::read_xy(path, "value")?;
        Self::from_samples(&xs, &vs)
    }

    fn edge(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    fn segment(&self, r: f64) -> Option<usize> {
        if r >= self.edge() {
            return None;
        }
        // xs[k] <= r < xs[k+1]
        let k = self.xs.partition_point(|&x| x <= r);
        Some(k.saturating_sub(1))
    }

    fn profile(&self, r: f64) -> f64 {
        match self.segment(r) {
            None => 0.0,
            Some(k) => {
                let t = (r - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
                self.vs[k] + t * (self.vs[k + 1] - self.vs[k])
            }
        }
    }

    fn slope(&self, r: f64) -> f64 {
        match self.segment(r) {
            None => 0.0,
            Some(k) => (self.vs[k + 1] - self.vs[k]) / (self.xs[k + 1] - self.xs[k]),
        }
    }

    fn max_slope(&self) -> f64 {
        self.xs
            .windows(2)
            .zip(self.vs.windows(2))
            .map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    fn moment(&self, p: i32) -> f64 {
        2.0 * quad::composite(
            &|r| r.powi(p) * self.profile(r),
            0.0,
            self.edge(),
            &self.xs,
            f64::INFINITY,
        )
    }

    /// Sample abscissae on the half line.
    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }
}

// ---------------------------------------------------------------------------
// Mollifiers

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Gaussian {
        sigma: f64,
    },
    Laplace {
        ell: f64,
    },
    /// Tabulated profile evaluated at `x / scale`.
    Custom {
        profile: Arc<SampledProfile>,
        scale: f64,
    },
}

/// A mollifier `V`: even, nonnegative, unit mass, bounded by `V(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierKernel {
    family: Family,
    dim: usize,
}

pub fn make_gaussian(sigma: f64, d: usize) -> Result<MollifierKernel> {
    check_positive("sigma", sigma)?;
    check_dim(d)?;
    Ok(MollifierKernel {
        family: Family::Gaussian { sigma },
        dim: d,
    })
}

pub fn make_laplace(ell: f64, d: usize) -> Result<MollifierKernel> {
    check_positive("ell", ell)?;
    if d != 1 {
        return Err(Error::Unsupported(format!(
            "laplace kernel in dimension {d} (closed forms are 1-D only)"
        )));
    }
    Ok(MollifierKernel {
        family: Family::Laplace { ell },
        dim: 1,
    })
}

pub fn make_custom(profile: SampledProfile) -> MollifierKernel {
    MollifierKernel {
        family: Family::Custom {
            profile: Arc::new(profile),
            scale: 1.0,
        },
        dim: 1,
    }
}

/// `V_eps(x) = eps^{-d} V(x / eps)`.
pub fn scale(v: &MollifierKernel, eps: f64) -> Result<MollifierKernel> {
    check_positive("eps", eps)?;
    let family = match &v.family {
        Family::Gaussian { sigma } => Family::Gaussian { sigma: sigma * eps },
        Family::Laplace { ell } => Family::Laplace { ell: ell * eps },
        Family::Custom { profile, scale } => Family::Custom {
            profile: profile.clone(),
            scale: scale * eps,
        },
    };
    Ok(MollifierKernel { family, dim: v.dim })
}

impl MollifierKernel {
    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Characteristic length (standard deviation per coordinate, `ell`, or the
    /// custom profile's standard deviation).
    pub fn length(&self) -> f64 {
        match &self.family {
            Family::Gaussian { sigma } => *sigma,
            Family::Laplace { ell } => *ell,
            Family::Custom { .. } => self.second_moment().sqrt(),
        }
    }

    /// Normalisation constant of the density (its prefactor).
    pub fn normalization(&self) -> f64 {
        match &self.family {
            Family::Gaussian { sigma } => (2.0 * PI * sigma * sigma).powf(-(self.dim as f64) / 2.0),
            Family::Laplace { ell } => 0.5 / ell,
            Family::Custom { profile, scale } => 1.0 / (profile.raw_mass * scale),
        }
    }

    /// Whether the gradient is continuous at the origin.
    pub fn lipschitz_at_origin(&self) -> bool {
        match &self.family {
            Family::Gaussian { .. } => true,
            Family::Laplace { .. } => false,
            Family::Custom { profile, .. } => {
                profile.slope(0.0).abs() <= 1e-9 * profile.vs[0] / profile.xs[1]
            }
        }
    }

    /// Constant `C` with `|∇V(x)| <= C (1 + |x|)`.
    pub fn grad_growth_constant(&self) -> f64 {
        match &self.family {
            Family::Gaussian { sigma } => self.normalization() * (-0.5f64).exp() / sigma,
            Family::Laplace { ell } => 0.5 / (ell * ell),
            Family::Custom { profile, scale } => profile.max_slope() / (scale * scale),
        }
    }

    fn as_factor(&self) -> Factor {
        match &self.family {
            Family::Gaussian { sigma } => Factor::Gaussian { var: sigma * sigma },
            Family::Laplace { ell } => Factor::Laplace { ell: *ell },
            Family::Custom { profile, scale } => Factor::Sampled {
                profile: profile.clone(),
                scale: *scale,
            },
        }
    }
}

impl EvenKernel for MollifierKernel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn profile(&self, r: f64) -> f64 {
        self.as_factor().profile(r, self.dim)
    }
    fn profile_deriv(&self, r: f64) -> f64 {
        self.as_factor().profile_deriv(r, self.dim)
    }
    fn profile_and_deriv(&self, r: f64) -> (f64, f64) {
        self.as_factor().profile_and_deriv(r, self.dim)
    }
    fn first_abs_moment(&self) -> f64 {
        self.as_factor().first_abs_moment(self.dim)
    }
    fn second_moment(&self) -> f64 {
        self.as_factor().second_moment(self.dim)
    }
    fn support_radius(&self) -> f64 {
        self.as_factor().support_radius()
    }
}

// ---------------------------------------------------------------------------
// Cross weights

/// The even probability measure `U_ij` weighting cross interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum CrossWeight {
    Dirac,
    Gaussian { sigma: f64 },
    Laplace { ell: f64 },
}

impl CrossWeight {
    pub fn validate(&self) -> Result<()> {
        match self {
            CrossWeight::Dirac => Ok(()),
            CrossWeight::Gaussian { sigma } => check_positive("sigma", *sigma),
            CrossWeight::Laplace { ell } => check_positive("ell", *ell),
        }
    }

    pub fn mass(&self) -> f64 {
        1.0
    }

    pub fn first_moment(&self) -> f64 {
        match self {
            CrossWeight::Dirac => 0.0,
            CrossWeight::Gaussian { sigma } => sigma * (2.0 / PI).sqrt(),
            CrossWeight::Laplace { ell } => *ell,
        }
    }

    fn as_factor(&self, eps: f64) -> Option<Factor> {
        match self {
            CrossWeight::Dirac => None,
            CrossWeight::Gaussian { sigma } => Some(Factor::Gaussian {
                var: (sigma * eps).powi(2),
            }),
            CrossWeight::Laplace { ell } => Some(Factor::Laplace { ell: ell * eps }),
        }
    }
}

// ---------------------------------------------------------------------------
// Radial building blocks

/// Cubic Hermite table of a radial profile on `[0, h * (len - 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    h: f64,
    values: Vec<f64>,
    derivs: Vec<f64>,
    length: f64,
}

impl HermiteTable {
    fn edge(&self) -> f64 {
        self.h * (self.values.len() - 1) as f64
    }

    fn locate(&self, r: f64) -> Option<(usize, f64)> {
        if r >= self.edge() {
            return None;
        }
        let s = r / self.h;
        let k = (s.floor() as usize).min(self.values.len() - 2);
        Some((k, s - k as f64))
    }

    fn value_deriv(&self, r: f64) -> (f64, f64) {
        let Some((k, t)) = self.locate(r) else {
            return (0.0, 0.0);
        };
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.derivs[k] * self.h, self.derivs[k + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dv = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv / self.h)
    }

    /// Node spacing.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    fn node_breaks(&self) -> Vec<f64> {
        (0..self.values.len()).map(|k| k as f64 * self.h).collect()
    }
}

/// Internal radial factor used both for mollifiers and convolution results.
#[derive(Debug, Clone)]
enum Factor {
    Gaussian {
        var: f64,
    },
    Laplace {
        ell: f64,
    },
    LaplaceSelf {
        ell: f64,
    },
    LaplacePair {
        a: f64,
        b: f64,
    },
    Sampled {
        profile: Arc<SampledProfile>,
        scale: f64,
    },
    Table(Arc<HermiteTable>),
}

impl Factor {
    fn profile(&self, r: f64, d: usize) -> f64 {
        self.profile_and_deriv(r, d).0
    }

    fn profile_deriv(&self, r: f64, d: usize) -> f64 {
        self.profile_and_deriv(r, d).1
    }

    fn profile_and_deriv(&self, r: f64, d: usize) -> (f64, f64) {
        match self {
            Factor::Gaussian { var } => {
                let c = (2.0 * PI * var).powf(-(d as f64) / 2.0);
                let v = c * (-0.5 * r * r / var).exp();
                (v, -r / var * v)
            }
            Factor::Laplace { ell } => {
                let v = 0.5 / ell * (-r / ell).exp();
                (v, -v / ell)
            }
            Factor::LaplaceSelf { ell } => {
                let e = (-r / ell).exp();
                (
                    0.25 / ell * (1.0 + r / ell) * e,
                    -r / (4.0 * ell.powi(3)) * e,
                )
            }
            Factor::LaplacePair { a, b } => {
                let (ea, eb) = ((-r / a).exp(), (-r / b).exp());
                let den = 2.0 * (a * a - b * b);
                ((a * ea - b * eb) / den, (eb - ea) / den)
            }
            Factor::Sampled { profile, scale } => {
                let s = r / scale;
                (
                    profile.profile(s) / scale,
                    profile.slope(s) / (scale * scale),
                )
            }
            Factor::Table(t) => t.value_deriv(r),
        }
    }

    fn first_abs_moment(&self, d: usize) -> f64 {
        match self {
            Factor::Gaussian { var } => {
                if d == 1 {
                    (2.0 * var / PI).sqrt()
                } else {
                    (PI * var / 2.0).sqrt()
                }
            }
            Factor::Laplace { ell } => *ell,
            Factor::LaplaceSelf { ell } => 1.5 * ell,
            Factor::LaplacePair { a, b } => (a * a + a * b + b * b) / (a + b),
            Factor::Sampled { profile, scale } => profile.moment(1) * scale,
            Factor::Table(t) => {
                2.0 * quad::composite(
                    &|r| r * t.value_deriv(r).0,
                    0.0,
                    t.edge(),
                    &t.node_breaks(),
                    f64::INFINITY,
                )
            }
        }
    }

    fn second_moment(&self, d: usize) -> f64 {
        match self {
            Factor::Gaussian { var } => d as f64 * var,
            Factor::Laplace { ell } => 2.0 * ell * ell,
            Factor::LaplaceSelf { ell } => 4.0 * ell * ell,
            Factor::LaplacePair { a, b } => 2.0 * (a * a + b * b),
            Factor::Sampled { profile, scale } => profile.moment(2) * scale * scale,
            Factor::Table(t) => {
                2.0 * quad::composite(
                    &|r| r * r * t.value_deriv(r).0,
                    0.0,
                    t.edge(),
                    &t.node_breaks(),
                    f64::INFINITY,
                )
            }
        }
    }

    /// Radius with profile below `TAIL_CUTOFF * peak`.
    fn support_radius(&self) -> f64 {
        let ln = -TAIL_CUTOFF.ln();
        match self {
            Factor::Gaussian { var } => (2.0 * var * ln).sqrt(),
            Factor::Laplace { ell } => ell * ln,
            // (1 + s) e^{-s} < cutoff
            Factor::LaplaceSelf { ell } => ell * (ln + (1.0 + ln + 4.0).ln()),
            Factor::LaplacePair { a, b } => a.max(*b) * (ln + 2.0),
            Factor::Sampled { profile, scale } => profile.edge() * scale,
            Factor::Table(t) => t.edge(),
        }
    }

    fn length(&self) -> f64 {
        match self {
            Factor::Gaussian { var } => var.sqrt(),
            Factor::Laplace { ell } | Factor::LaplaceSelf { ell } => *ell,
            Factor::LaplacePair { a, b } => a.min(*b),
            Factor::Sampled { .. } => self.second_moment(1).sqrt(),
            Factor::Table(t) => t.length,
        }
    }

    /// Kinks of the profile or its derivative on the full line (1-D).
    fn breaks(&self) -> Vec<f64> {
        match self {
            Factor::Gaussian { .. } => Vec::new(),
            Factor::Sampled { profile, scale } => profile
                .xs
                .iter()
                .flat_map(|x| [-x * scale, x * scale])
                .collect(),
            _ => vec![0.0],
        }
    }

    fn value1(&self, x: f64) -> f64 {
        self.profile(x.abs(), 1)
    }

    fn deriv1(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.signum() * self.profile_deriv(x.abs(), 1)
        }
    }
}

/// Tabulation controls for numerically convolved kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableOptions {
    /// Table nodes per characteristic length of the narrowest factor.
    pub nodes_per_length: usize,
    /// Largest tolerated interpolation error relative to the peak.
    pub max_rel_error: f64,
    /// Tabulate even when a closed form exists (for cross-checks).
    pub force_numeric: bool,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            nodes_per_length: 32,
            max_rel_error: 1e-6,
            force_numeric: false,
        }
    }
}

fn conv_at(f: &Factor, g: &Factor, x: f64, fb: &[f64], gb: &[f64], panel: f64) -> (f64, f64) {
    let (rf, rg) = (f.support_radius(), g.support_radius());
    let lo = (-rf).max(x - rg);
    let hi = rf.min(x + rg);
    let mut breaks: Vec<f64> = fb.to_vec();
    breaks.extend(gb.iter().map(|b| x - b));
    let v = quad::composite(&|y| f.value1(y) * g.value1(x - y), lo, hi, &breaks, panel);
    let dv = quad::composite(&|y| f.value1(y) * g.deriv1(x - y), lo, hi, &breaks, panel);
    (v, dv)
}

fn tabulate(f: &Factor, g: &Factor, opts: &TableOptions) -> Result<Factor> {
    let length = f.length().min(g.length());
    let radius = f.support_radius() + g.support_radius();
    let radius = radius.max(12.0 * (f.length().max(g.length())));
    let h = length / opts.nodes_per_length as f64;
    let panel = length / 8.0;
    let n = (radius / h).ceil() as usize + 1;
    let (fb, gb) = (f.breaks(), g.breaks());
    let mut values = Vec::with_capacity(n + 1);
    let mut derivs = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let (v, d) = conv_at(f, g, k as f64 * h, &fb, &gb, panel);
        values.push(v.max(0.0));
        derivs.push(if k == 0 { 0.0 } else { d });
    }
    // force the exact zero tail
    if let Some(last) = values.last_mut() {
        *last = 0.0;
    }
    if let Some(last) = derivs.last_mut() {
        *last = 0.0;
    }
    let table = HermiteTable {
        h,
        values,
        derivs,
        length,
    };
    // resolution estimate at interval midpoints
    let peak = table.values[0];
    let stride = (n / 256).max(1);
    let mut worst: f64 = 0.0;
    for k in (0..n).step_by(stride) {
        let r = (k as f64 + 0.5) * h;
        let exact = conv_at(f, g, r, &fb, &gb, panel).0;
        worst = worst.max((exact - table.value_deriv(r).0).abs() / peak);
    }
    if worst > opts.max_rel_error {
        return Err(Error::Resolution {
            estimate: worst,
            limit: opts.max_rel_error,
        });
    }
    log::debug!(
        "tabulated kernel: {} nodes, h = {h:.3e}, est. rel. error {worst:.2e}",
        n + 1
    );
    Ok(Factor::Table(Arc::new(table)))
}

fn convolve(f: &Factor, g: &Factor, d: usize, opts: &TableOptions) -> Result<Factor> {
    if !opts.force_numeric {
        match (f, g) {
            (Factor::Gaussian { var: a }, Factor::Gaussian { var: b }) => {
                return Ok(Factor::Gaussian { var: a + b })
            }
            (Factor::Laplace { ell: a }, Factor::Laplace { ell: b }) => {
                return Ok(if (a - b).abs() <= 1e-12 * a.max(*b) {
                    Factor::LaplaceSelf { ell: *a }
                } else {
                    Factor::LaplacePair { a: *a, b: *b }
                })
            }
            _ => {}
        }
    }
    if d != 1 {
        return Err(Error::Unsupported(
            "numerical kernel convolution is 1-D only".into(),
        ));
    }
    tabulate(f, g, opts)
}

// ---------------------------------------------------------------------------
// Interaction kernels

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `W = V * V`
    SelfConvolution,
    /// `K = V_i * U * V_j`
    Cross,
}

/// Which evaluation path an interaction kernel uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    ClosedForm,
    Tabulated,
}

/// An interaction kernel: `W_eps = V_eps * V_eps` or `K_eps = V_eps * U_eps * V'_eps`.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    kind: KernelKind,
    weight: CrossWeight,
    backend: Factor,
    dim: usize,
    scale: f64,
}

pub fn self_convolve(v: &MollifierKernel) -> Result<InteractionKernel> {
    self_convolve_with(v, &TableOptions::default())
}

pub fn self_convolve_with(v: &MollifierKernel, opts: &TableOptions) -> Result<InteractionKernel> {
    let f = v.as_factor();
    Ok(InteractionKernel {
        kind: KernelKind::SelfConvolution,
        weight: CrossWeight::Dirac,
        backend: convolve(&f, &f, v.dim, opts)?,
        dim: v.dim,
        scale: 1.0,
    })
}

/// `K^eps = V_i^eps * U^eps * V_j^eps`, with all three factors rescaled by `eps`.
pub fn cross_convolve(
    vi: &MollifierKernel,
    u: &CrossWeight,
    vj: &MollifierKernel,
    eps: f64,
) -> Result<InteractionKernel> {
    cross_convolve_with(vi, u, vj, eps, &TableOptions::default())
}

pub fn cross_convolve_with(
    vi: &MollifierKernel,
    u: &CrossWeight,
    vj: &MollifierKernel,
    eps: f64,
    opts: &TableOptions,
) -> Result<InteractionKernel> {
    check_positive("eps", eps)?;
    u.validate()?;
    if vi.dim != vj.dim {
        return Err(Error::param(
            "kernel.dim",
            "cross factors must share a dimension",
        ));
    }
    let d = vi.dim;
    let fi = vi.as_factor();
    let fj = vj.as_factor();
    let first = match u.as_factor(1.0) {
        None => fi,
        Some(fu) => convolve(&fi, &fu, d, opts)?,
    };
    Ok(InteractionKernel {
        kind: KernelKind::Cross,
        weight: u.clone(),
        backend: convolve(&first, &fj, d, opts)?,
        dim: d,
        scale: eps,
    })
}

/// The partial convolution `V^eps * U^eps` used to define cross excess fields.
pub fn weight_mollifier(
    v: &MollifierKernel,
    u: &CrossWeight,
    eps: f64,
) -> Result<InteractionKernel> {
    check_positive("eps", eps)?;
    u.validate()?;
    let backend = match u.as_factor(1.0) {
        None => v.as_factor(),
        Some(fu) => convolve(&v.as_factor(), &fu, v.dim, &TableOptions::default())?,
    };
    Ok(InteractionKernel {
        kind: KernelKind::Cross,
        weight: u.clone(),
        backend,
        dim: v.dim,
        scale: eps,
    })
}

impl InteractionKernel {
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn cross_weight(&self) -> &CrossWeight {
        &self.weight
    }

    pub fn backend(&self) -> BackendKind {
        match self.backend {
            Factor::Table(_) | Factor::Sampled { .. } => BackendKind::Tabulated,
            _ => BackendKind::ClosedForm,
        }
    }

    /// The scale `eps` applied on top of the unit kernel.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Table node spacing (in unit-kernel coordinates) for tabulated kernels.
    pub fn table_spacing(&self) -> Option<f64> {
        match &self.backend {
            Factor::Table(t) => Some(t.spacing()),
            _ => None,
        }
    }

    /// Same kernel at scale `eps` (unit kernel unchanged, no re-tabulation).
    pub fn rescaled(&self, eps: f64) -> Result<Self> {
        check_positive("eps", eps)?;
        Ok(Self {
            scale: eps,
            ..self.clone()
        })
    }

    /// `eps^{-d}`.
    fn prefactor(&self) -> f64 {
        self.scale.powi(-(self.dim as i32))
    }
}

impl EvenKernel for InteractionKernel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn profile(&self, r: f64) -> f64 {
        self.prefactor() * self.backend.profile(r / self.scale, self.dim)
    }
    fn profile_deriv(&self, r: f64) -> f64 {
        self.prefactor() / self.scale * self.backend.profile_deriv(r / self.scale, self.dim)
    }
    fn profile_and_deriv(&self, r: f64) -> (f64, f64) {
        let (v, d) = self.backend.profile_and_deriv(r / self.scale, self.dim);
        let c = self.prefactor();
        (c * v, c / self.scale * d)
    }
    fn first_abs_moment(&self) -> f64 {
        self.scale * self.backend.first_abs_moment(self.dim)
    }
    fn second_moment(&self) -> f64 {
        self.scale * self.scale * self.backend.second_moment(self.dim)
    }
    fn support_radius(&self) -> f64 {
        self.scale * self.backend.support_radius()
    }
}
