//! Interaction energy, particle forces, the two-species relative energy, test
//! functions and the commutator ("excess") fields `V*(ρ∇φ) - (V*ρ)∇φ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernels::{EvenKernel, InteractionKernel};
use crate::measures::{for_each_near, GridDensity, GridShape, ParticleMeasure};
use crate::quad::trapezoid;
use crate::{Error, Result};

fn is_sorted(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}

/// `S = Σ_{i<j} K(x_i - x_j)`; if `grad` is given, adds `Σ_{j≠i} K'(x_i - x_j)`
/// to `grad[i]`. Sorted input uses a support window, unsorted input the full sum.
pub(crate) fn pair_sum_1d<K: EvenKernel + ?Sized>(
    xs: &[f64],
    k: &K,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    if is_sorted(xs) {
        let r = k.support_radius();
        for i in 0..n {
            let xi = xs[i];
            for j in i + 1..n {
                let d = xi - xs[j];
                if -d > r {
                    break;
                }
                let (v, dv) = k.eval_deriv1(d);
                s += v;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] += dv;
                    g[j] -= dv;
                }
            }
        }
    } else {
        for i in 0..n {
            for j in i + 1..n {
                let (v, dv) = k.eval_deriv1(xs[i] - xs[j]);
                s += v;
                if let Some(g) = grad.as_deref_mut() {
                    g[i] += dv;
                    g[j] -= dv;
                }
            }
        }
    }
    s
}

fn pair_sum_nd<K: EvenKernel + ?Sized>(
    mu: &ParticleMeasure,
    k: &K,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let d = mu.dim();
    let n = mu.len();
    let mut s = 0.0;
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in i + 1..n {
            for c in 0..d {
                diff[c] = mu.point(i)[c] - mu.point(j)[c];
            }
            s += k.eval(&diff);
            if let Some(g) = grad.as_deref_mut() {
                let gv = k.eval_grad(&diff);
                for c in 0..d {
                    g[i * d + c] += gv[c];
                    g[j * d + c] -= gv[c];
                }
            }
        }
    }
    s
}

fn pair_sum<K: EvenKernel + ?Sized>(mu: &ParticleMeasure, k: &K, grad: Option<&mut [f64]>) -> f64 {
    if mu.dim() == 1 {
        pair_sum_1d(mu.coords(), k, grad)
    } else {
        pair_sum_nd(mu, k, grad)
    }
}

/// `Σ_i Σ_j K(x_i - y_j)` for sorted `ys`; with `grad`, adds `Σ_j K'(x_i - y_j)` to `grad[i]`.
pub(crate) fn cross_sum_1d<K: EvenKernel + ?Sized>(
    xs: &[f64],
    ys: &[f64],
    k: &K,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let r = k.support_radius();
    let mut s = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let lo = ys.partition_point(|&y| y < x - r);
        for &y in &ys[lo..] {
            if y > x + r {
                break;
            }
            let (v, dv) = k.eval_deriv1(x - y);
            s += v;
            if let Some(g) = grad.as_deref_mut() {
                g[i] += dv;
            }
        }
    }
    s
}

fn cross_sum_nd<K: EvenKernel + ?Sized>(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    k: &K,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let d = mu.dim();
    let mut s = 0.0;
    let mut diff = vec![0.0; d];
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            for c in 0..d {
                diff[c] = mu.point(i)[c] - nu.point(j)[c];
            }
            s += k.eval(&diff);
            if let Some(g) = grad.as_deref_mut() {
                let gv = k.eval_grad(&diff);
                for c in 0..d {
                    g[i * d + c] += gv[c];
                }
            }
        }
    }
    s
}

pub(crate) fn cross_sum<K: EvenKernel + ?Sized>(
    mu: &ParticleMeasure,
    nu: &ParticleMeasure,
    k: &K,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::param(
            "particles",
            "species live in different dimensions",
        ));
    }
    Ok(if mu.dim() == 1 {
        cross_sum_1d(mu.coords(), nu.coords(), k, grad)
    } else {
        cross_sum_nd(mu, nu, k, grad)
    })
}

/// `𝒲[ρ] = 1/2 ∬ W(x - y) dρ dρ` for an empirical measure.
#[derive(Debug, Clone)]
pub struct InteractionEnergy {
    pub kernel: InteractionKernel,
    /// Include the `i = j` terms `W(0)/(2N)`; they do not depend on positions.
    pub include_diagonal: bool,
}

impl InteractionEnergy {
    pub fn new(kernel: InteractionKernel) -> Self {
        Self {
            kernel,
            include_diagonal: true,
        }
    }

    pub fn value(&self, mu: &ParticleMeasure) -> f64 {
        let n = mu.len() as f64;
        let off = pair_sum(mu, &self.kernel, None);
        let diag = if self.include_diagonal {
            n * self.kernel.profile(0.0)
        } else {
            0.0
        };
        (diag + 2.0 * off) / (2.0 * n * n)
    }
}

/// `(1/(2N^2)) Σ_i Σ_j W(X_i - X_j)`, diagonal included.
pub fn interaction_energy(mu: &ParticleMeasure, w: &InteractionKernel) -> f64 {
    InteractionEnergy::new(w.clone()).value(mu)
}

/// `F_i = -(1/N) Σ_j ∇W(X_i - X_j)`, row-major.
pub fn interaction_force(mu: &ParticleMeasure, w: &InteractionKernel) -> Vec<f64> {
    let mut g = vec![0.0; mu.coords().len()];
    pair_sum(mu, w, Some(&mut g));
    let inv_n = 1.0 / mu.len() as f64;
    g.iter().map(|v| -v * inv_n).collect()
}

// ---------------------------------------------------------------------------
// Two species

/// Cross-diffusion coefficients, validated against
/// `min{A11, A22} > (A12 + A21)/2 >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionMatrix {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl DiffusionMatrix {
    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Result<Self> {
        let m = Self { a11, a12, a21, a22 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { a11, a12, a21, a22 } = *self;
        let entries = [a11, a12, a21, a22];
        let desc = format!("A = ({a11}, {a12}; {a21}, {a22})");
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Assumption(format!(
                "{desc}: entries must be finite and nonnegative"
            )));
        }
        let off = 0.5 * (a12 + a21);
        if !(a11.min(a22) > off) {
            return Err(Error::Assumption(format!(
                "{desc}: min{{A11,A22}} = {} is not > (A12+A21)/2 = {off}",
                a11.min(a22)
            )));
        }
        Ok(())
    }
}

/// The self kernels `H_i`, cross kernels `K_i` and the coefficient matrix.
#[derive(Debug, Clone)]
pub struct RelativeEnergy {
    pub h1: InteractionKernel,
    pub h2: InteractionKernel,
    pub k1: InteractionKernel,
    pub k2: InteractionKernel,
    pub a: DiffusionMatrix,
}

/// Value of `ℱ[μ|ν] = ℋ[μ] + 𝒦[μ|ν]` with its split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEnergyValue {
    pub h: f64,
    pub k: f64,
    pub total: f64,
}

impl RelativeEnergy {
    pub fn new(
        h1: InteractionKernel,
        h2: InteractionKernel,
        k1: InteractionKernel,
        k2: InteractionKernel,
        a: DiffusionMatrix,
    ) -> Result<Self> {
        a.validate()?;
        Ok(Self { h1, h2, k1, k2, a })
    }

    /// ℋ alone: `(A11/2) ∬ H1 dμ1 dμ1 + (A22/2) ∬ H2 dμ2 dμ2`.
    pub fn self_part(&self, mu: (&ParticleMeasure, &ParticleMeasure)) -> f64 {
        self.a.a11 * interaction_energy(mu.0, &self.h1)
            + self.a.a22 * interaction_energy(mu.1, &self.h2)
    }

    /// `A12 ∬ K1 dν2 dμ1 + A21 ∬ K2 dν1 dμ2`.
    pub fn cross_part(
        &self,
        mu: (&ParticleMeasure, &ParticleMeasure),
        nu: (&ParticleMeasure, &ParticleMeasure),
    ) -> Result<f64> {
        let c1 = cross_sum(mu.0, nu.1, &self.k1, None)? / (mu.0.len() * nu.1.len()) as f64;
        let c2 = cross_sum(mu.1, nu.0, &self.k2, None)? / (mu.1.len() * nu.0.len()) as f64;
        Ok(self.a.a12 * c1 + self.a.a21 * c2)
    }

    pub fn value(
        &self,
        mu: (&ParticleMeasure, &ParticleMeasure),
        nu: (&ParticleMeasure, &ParticleMeasure),
    ) -> Result<RelativeEnergyValue> {
        let h = self.self_part(mu);
        let k = self.cross_part(mu, nu)?;
        Ok(RelativeEnergyValue { h, k, total: h + k })
    }
}

pub fn relative_energy(
    mu: (&ParticleMeasure, &ParticleMeasure),
    nu: (&ParticleMeasure, &ParticleMeasure),
    re: &RelativeEnergy,
) -> Result<RelativeEnergyValue> {
    re.value(mu, nu)
}

// ---------------------------------------------------------------------------
// Test functions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestShape {
    /// `(1 - r^2)^3` on `|r| < 1` — C².
    Bump,
    /// `1 - 2r^2` on `|r| <= 1/2`, `2(1 - |r|)^2` on `1/2 < |r| < 1` — C¹ with bounded second derivative.
    QuadraticWindow,
}

/// Compactly supported test function `φ((x - center)/width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub shape: TestShape,
    pub center: f64,
    pub width: f64,
}

impl TestFunction {
    pub fn bump(center: f64, width: f64) -> Result<Self> {
        Self::new(TestShape::Bump, center, width)
    }

    pub fn quadratic_window(center: f64, width: f64) -> Result<Self> {
        Self::new(TestShape::QuadraticWindow, center, width)
    }

    pub fn new(shape: TestShape, center: f64, width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0 && center.is_finite()) {
            return Err(Error::param(
                "test_functions",
                format!("invalid center/width ({center}, {width})"),
            ));
        }
        Ok(Self {
            shape,
            center,
            width,
        })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.width, self.center + self.width)
    }

    fn r(&self, x: f64) -> Option<f64> {
        let r = (x - self.center) / self.width;
        (r.abs() < 1.0).then_some(r)
    }

    pub fn value(&self, x: f64) -> f64 {
        let Some(r) = self.r(x) else { return 0.0 };
        match self.shape {
            TestShape::Bump => (1.0 - r * r).powi(3),
            TestShape::QuadraticWindow => {
                if r.abs() <= 0.5 {
                    1.0 - 2.0 * r * r
                } else {
                    2.0 * (1.0 - r.abs()).powi(2)
                }
            }
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        let Some(r) = self.r(x) else { return 0.0 };
        let g = match self.shape {
            TestShape::Bump => -6.0 * r * (1.0 - r * r).powi(2),
            TestShape::QuadraticWindow => {
                if r.abs() <= 0.5 {
                    -4.0 * r
                } else {
                    -4.0 * r.signum() * (1.0 - r.abs())
                }
            }
        };
        g / self.width
    }

    pub fn hess(&self, x: f64) -> f64 {
        let Some(r) = self.r(x) else { return 0.0 };
        let h = match self.shape {
            TestShape::Bump => -6.0 * (1.0 - r * r) * (1.0 - 5.0 * r * r),
            TestShape::QuadraticWindow => {
                if r.abs() <= 0.5 {
                    -4.0
                } else {
                    4.0
                }
            }
        };
        h / (self.width * self.width)
    }

    /// `‖D²φ‖_∞`.
    pub fn hess_sup(&self) -> f64 {
        let c = match self.shape {
            TestShape::Bump => 6.0,
            TestShape::QuadraticWindow => 4.0,
        };
        c / (self.width * self.width)
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.shape {
            TestShape::Bump => "bump",
            TestShape::QuadraticWindow => "quadratic_window",
        };
        write!(f, "{name}({},{})", self.center, self.width)
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::param(
                "test_functions",
                format!("cannot parse `{s}`; expected bump(c,w) or quadratic_window(c,w)"),
            )
        };
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let shape = match s[..open].trim() {
            "bump" => TestShape::Bump,
            "quadratic_window" => TestShape::QuadraticWindow,
            _ => return Err(bad()),
        };
        let args: Vec<f64> = inner
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match args[..] {
            [c, w] => Self::new(shape, c, w),
            _ => Err(bad()),
        }
    }
}

impl Serialize for TestFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TestFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Five staggered bumps covering the bulk of a unit-mass profile near the origin.
pub fn default_test_functions() -> Vec<TestFunction> {
    [
        (-0.9, 0.6),
        (-0.4, 0.8),
        (0.0, 1.0),
        (0.45, 0.7),
        (1.0, 0.5),
    ]
    .iter()
    .map(|&(c, w)| TestFunction::bump(c, w).expect("valid default test function"))
    .collect()
}

// ---------------------------------------------------------------------------
// Excess fields

/// `z` on a grid together with its L¹ and L² norms.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcessField {
    pub shape: GridShape,
    pub values: Vec<f64>,
    pub l1: f64,
    pub l2: f64,
}

impl ExcessField {
    fn from_values(shape: GridShape, values: Vec<f64>) -> Self {
        let dx = shape.dx();
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
        Self {
            shape,
            l1: trapezoid(&abs, dx),
            l2: trapezoid(&sq, dx).sqrt(),
            values,
        }
    }
}

/// `z(x) = (1/N) Σ_i V(x - X_i) ∇φ(X_i) - v(x) ∇φ(x)` with `v = V*μ`.
pub fn excess_term<K: EvenKernel + ?Sized>(
    mu: &ParticleMeasure,
    v: &K,
    phi: &TestFunction,
    shape: GridShape,
) -> Result<ExcessField> {
    let vgrid: GridDensity = crate::measures::mollify(mu, v, shape)?;
    let xs = mu.coords();
    let inv_n = 1.0 / xs.len() as f64;
    let gphi: Vec<f64> = xs.iter().map(|&x| phi.grad(x)).collect();
    let mut weighted = vec![0.0; shape.m];
    for_each_near(xs, &shape, v.support_radius(), |k, j| {
        weighted[k] += v.eval1(shape.x(k) - xs[j]) * gphi[j];
    });
    let values = (0..shape.m)
        .map(|k| weighted[k] * inv_n - vgrid.values()[k] * phi.grad(shape.x(k)))
        .collect();
    Ok(ExcessField::from_values(shape, values))
}

/// Cross excess `P*(ρ1∇φ) - (P*ρ1)∇φ` with `P = V1 * U12` (see
/// [`crate::kernels::weight_mollifier`]).
pub fn cross_excess_term(
    mu1: &ParticleMeasure,
    p12: &InteractionKernel,
    phi: &TestFunction,
    shape: GridShape,
) -> Result<ExcessField> {
    excess_term(mu1, p12, phi, shape)
}

/// `ε ‖D²φ‖_∞ ∫|z| V1(z) dz`, i.e. `‖D²φ‖_∞` times the first absolute moment of `V_ε`.
pub fn excess_l1_bound<K: EvenKernel + ?Sized>(v_eps: &K, phi: &TestFunction) -> f64 {
    phi.hess_sup() * v_eps.first_abs_moment()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_function_parse_roundtrip() {
        let f: TestFunction = "bump(0.5, 1.25)".parse().unwrap();
        assert_eq!(f, TestFunction::bump(0.5, 1.25).unwrap());
        let g: TestFunction = f.to_string().parse().unwrap();
        assert_eq!(f, g);
        assert!("gauss(0,1)".parse::<TestFunction>().is_err());
        assert!("bump(0,-1)".parse::<TestFunction>().is_err());
        assert!("bump(0)".parse::<TestFunction>().is_err());
    }

    #[test]
    fn test_function_derivatives_match_differences() {
        for f in [
            TestFunction::bump(0.2, 0.7).unwrap(),
            TestFunction::quadratic_window(-0.1, 0.9).unwrap(),
        ] {
            let h = 1e-6;
            for x in [-0.5, -0.13, 0.1, 0.33, 0.6] {
                let fd = (f.value(x + h) - f.value(x - h)) / (2.0 * h);
                assert!((fd - f.grad(x)).abs() < 1e-6, "{f} at {x}");
                let fd2 = (f.grad(x + h) - f.grad(x - h)) / (2.0 * h);
                assert!((fd2 - f.hess(x)).abs() < 1e-4, "{f} at {x}");
                assert!(f.hess(x).abs() <= f.hess_sup() + 1e-12);
            }
            assert_eq!(f.value(5.0), 0.0);
            assert_eq!(f.grad(5.0), 0.0);
        }
    }

    #[test]
    fn matrix_validation() {
        assert!(DiffusionMatrix::new(1.0, 0.4, 0.4, 1.0).is_ok());
        let e = DiffusionMatrix::new(1.0, 1.2, 1.2, 1.0).unwrap_err();
        assert!(e.to_string().contains("min{A11,A22} > (A12+A21)/2"));
        assert!(DiffusionMatrix::new(1.0, -0.1, 0.0, 1.0).is_err());
    }
}
