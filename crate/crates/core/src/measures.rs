//! Equal-weight particle measures, uniform-grid densities, 1-D transport
//! distances, mollification and grid functionals.

use serde::{Deserialize, Serialize};

use crate::kernels::EvenKernel;
use crate::quad::trapezoid;
use crate::{Error, Result};

/// `N` equal-weight atoms in dimension 1 or 2. In 1-D positions are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    pos: Vec<f64>,
}

impl ParticleMeasure {
    /// 1-D measure; positions are sorted on construction.
    pub fn new_1d(mut positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Degenerate(
                "particle measure needs at least one atom".into(),
            ));
        }
        if let Some(x) = positions.iter().find(|x| !x.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-finite particle position {x}"
            )));
        }
        positions.sort_by(f64::total_cmp);
        Ok(Self {
            dim: 1,
            pos: positions,
        })
    }

    /// Measure in dimension `dim` from row-major coordinates.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        match dim {
            1 => Self::new_1d(coords),
            2 => {
                if coords.is_empty() || coords.len() % 2 != 0 {
                    return Err(Error::Degenerate(
                        "2-D coordinates must come in pairs".into(),
                    ));
                }
                if coords.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Degenerate("non-finite particle position".into()));
                }
                Ok(Self { dim, pos: coords })
            }
            d => Err(Error::Unsupported(format!("particle dimension {d}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pos.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    /// Row-major coordinates (sorted positions in 1-D).
    pub fn coords(&self) -> &[f64] {
        &self.pos
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.pos[i * self.dim..(i + 1) * self.dim]
    }

    /// Replaces the 1-D positions, which must already be sorted.
    pub(crate) fn from_sorted_unchecked(pos: Vec<f64>) -> Self {
        debug_assert!(pos.windows(2).all(|w| w[0] <= w[1]));
        Self { dim: 1, pos }
    }

    pub(crate) fn from_raw(dim: usize, pos: Vec<f64>) -> Self {
        Self { dim, pos }
    }

    /// Shifts every particle by `c` (per coordinate).
    pub fn translated(&self, c: &[f64]) -> Self {
        let pos = self
            .pos
            .chunks(self.dim)
            .flat_map(|p| p.iter().zip(c).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        Self { dim: self.dim, pos }
    }

    pub fn min_max(&self) -> (f64, f64) {
        let lo = self.pos.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.pos.chunks(self.dim) {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter().map(|v| v / n).collect()
    }
}

/// Uniform grid on `[a, b]` with `m` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub a: f64,
    pub b: f64,
    pub m: usize,
}

impl GridShape {
    pub fn new(a: f64, b: f64, m: usize) -> Result<Self> {
        let g = Self { a, b, m };
        g.validate()?;
        Ok(g)
    }

    /// Grid on `[a, b]` with spacing at most `dx`.
    pub fn with_spacing(a: f64, b: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(Error::param("grid.dx", "must be positive"));
        }
        Self::new(a, b, ((b - a) / dx).ceil() as usize + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.b > self.a) {
            return Err(Error::param(
                "grid",
                format!("need a < b, got [{}, {}]", self.a, self.b),
            ));
        }
        if self.m < 3 {
            return Err(Error::param("grid.m", "need at least 3 nodes"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / (self.m - 1) as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        if k + 1 == self.m {
            self.b
        } else {
            self.a + k as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.x(k)).collect()
    }
}

/// Nonnegative samples of a density on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    shape: GridShape,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.m {
            return Err(Error::param(
                "grid.values",
                format!("expected {} values, got {}", shape.m, values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::param(
                "grid.values",
                format!("density values must be finite and >= 0, got {v}"),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn from_fn(shape: GridShape, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = shape.nodes().into_iter().map(f).collect();
        Self::new(shape, values)
    }

    /// Uniform probability density on `[lo, hi]` sampled on `shape`.
    pub fn uniform(shape: GridShape, lo: f64, hi: f64) -> Result<Self> {
        Self::from_fn(shape, |x| {
            if x >= lo && x <= hi {
                1.0 / (hi - lo)
            } else {
                0.0
            }
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.shape.dx())
    }

    /// Whether the trapezoidal mass is within `tol` of one.
    pub fn is_probability(&self, tol: f64) -> bool {
        (self.mass() - 1.0).abs() <= tol
    }

    /// Rescales so that the trapezoidal mass is exactly one.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::Degenerate("density has zero mass".into()));
        }
        Ok(Self {
            shape: self.shape,
            values: self.values.iter().map(|v| v / m).collect(),
        })
    }

    /// Trapezoidal `∫ f(x) v(x) dx`.
    pub fn integrate_against(&self, f: impl Fn(f64) -> f64) -> f64 {
        let w: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| v * f(self.shape.x(k)))
            .collect();
        trapezoid(&w, self.shape.dx())
    }

    /// Second-order finite-difference derivative (one-sided at the ends).
    pub fn gradient(&self) -> Vec<f64> {
        let v = &self.values;
        let m = v.len();
        let dx = self.shape.dx();
        (0..m)
            .map(|k| {
                if k == 0 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dx)
                } else if k + 1 == m {
                    (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) / (2.0 * dx)
                } else {
                    (v[k + 1] - v[k - 1]) / (2.0 * dx)
                }
            })
            .collect()
    }
}

/// First absolute and second moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
}

/// Places particle `i` at the `(i - 1/2)/N` quantile of the piecewise-linear CDF
/// through the trapezoidal cumulative masses at the grid nodes.
pub fn quantiles_from_density(rho0: &GridDensity, n: usize) -> Result<ParticleMeasure> {
    if n < 1 {
        return Err(Error::param("n", "need at least one particle"));
    }
    let shape = rho0.shape();
    let dx = shape.dx();
    let v = rho0.values();
    let mut cdf = Vec::with_capacity(v.len());
    cdf.push(0.0);
    for k in 1..v.len() {
        let prev = cdf[k - 1];
        cdf.push(prev + 0.5 * dx * (v[k - 1] + v[k]));
    }
    let total = *cdf.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::Degenerate("initial density has zero mass".into()));
    }
    let mut pos = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let target = total * (i as f64 + 0.5) / n as f64;
        while k + 2 < cdf.len() && cdf[k + 1] < target {
            k += 1;
        }
        let (c0, c1) = (cdf[k], cdf[k + 1]);
        let t = if c1 > c0 {
            ((target - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        pos.push(shape.x(k) + t * dx);
    }
    ParticleMeasure::new_1d(pos)
}

fn check_coverage(mu: &ParticleMeasure, shape: &GridShape) -> Result<()> {
    let (lo, hi) = mu.min_max();
    if lo < shape.a || hi > shape.b {
        return Err(Error::Coverage {
            a: shape.a,
            b: shape.b,
            min: lo,
            max: hi,
        });
    }
    Ok(())
}

/// Applies `f(k, j)` for every grid node `k` and every particle `j` within the
/// kernel's support radius of that node (1-D, sorted particles).
pub(crate) fn for_each_near<F: FnMut(usize, usize)>(
    xs: &[f64],
    shape: &GridShape,
    radius: f64,
    mut f: F,
) {
    let mut lo = 0;
    let mut hi = 0;
    for k in 0..shape.m {
        let x = shape.x(k);
        while lo < xs.len() && xs[lo] < x - radius {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < xs.len() && xs[hi] <= x + radius {
            hi += 1;
        }
        for j in lo..hi {
            f(k, j);
        }
    }
}

/// `v(x_k) = (1/N) Σ_i V(x_k - X_i)` on `shape`.
pub fn mollify<K: EvenKernel + ?Sized>(
    mu: &ParticleMeasure,
    v: &K,
    shape: GridShape,
) -> Result<GridDensity> {
    if mu.dim() != 1 {
        return Err(Error::Unsupported(
            "mollification on grids is 1-D only".into(),
        ));
    }
    shape.validate()?;
    check_coverage(mu, &shape)?;
    let len = v.second_moment().sqrt();
    if shape.dx() > len / 4.0 {
        log::warn!(
            "grid spacing {:.3e} does not resolve kernel length {:.3e} (want dx <= length/4)",
            shape.dx(),
            len
        );
    }
    let xs = mu.coords();
    let inv_n = 1.0 / xs.len() as f64;
    let mut values = vec![0.0; shape.m];
    for_each_near(xs, &shape, v.support_radius(), |k, j| {
        values[k] += v.eval1(shape.x(k) - xs[j]);
    });
    for val in &mut values {
        *val *= inv_n;
    }
    GridDensity::new(shape, values)
}

fn require_1d(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<()> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::Unsupported(
            "optimal transport in dimension > 1".into(),
        ));
    }
    Ok(())
}

/// Integrates `cost(F^{-1}(s) - G^{-1}(s))` over `s in (0,1)` for two sorted
/// empirical measures by merging their quantile step functions exactly.
fn quantile_cost(x: &[f64], y: &[f64], cost: impl Fn(f64) -> f64) -> f64 {
    if x.len() == y.len() {
        let s: f64 = x.iter().zip(y).map(|(a, b)| cost(a - b)).sum();
        return s / x.len() as f64;
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut s = 0.0;
    let mut total = 0.0;
    while i < x.len() && j < y.len() {
        let ei = (i + 1) as f64 / n;
        let ej = (j + 1) as f64 / m;
        let next = ei.min(ej);
        total += (next - s) * cost(x[i] - y[j]);
        s = next;
        if ei <= next {
            i += 1;
        }
        if ej <= next {
            j += 1;
        }
    }
    total
}

/// Squared quadratic Wasserstein distance in 1-D.
pub fn wasserstein2_1d(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<f64> {
    require_1d(mu, nu)?;
    Ok(quantile_cost(mu.coords(), nu.coords(), |d| d * d))
}

/// 1-Wasserstein distance in 1-D.
pub fn wasserstein1_1d(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<f64> {
    require_1d(mu, nu)?;
    Ok(quantile_cost(mu.coords(), nu.coords(), f64::abs))
}

/// `(1/N) Σ |X_i|^2`.
pub fn second_moment(mu: &ParticleMeasure) -> f64 {
    mu.coords().iter().map(|x| x * x).sum::<f64>() / mu.len() as f64
}

pub fn moments(mu: &ParticleMeasure) -> Moments {
    let n = mu.len() as f64;
    let m1 = (0..mu.len())
        .map(|i| mu.point(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    Moments {
        m1,
        m2: second_moment(mu),
    }
}

/// Trapezoidal `∫ v log v` with `0 log 0 = 0`.
pub fn entropy(v: &GridDensity) -> f64 {
    let w: Vec<f64> = v
        .values()
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .collect();
    trapezoid(&w, v.shape().dx())
}

/// Trapezoidal `∫ |v'|^2` with second-order differences.
pub fn h1_seminorm_sq(v: &GridDensity) -> f64 {
    let g: Vec<f64> = v.gradient().iter().map(|d| d * d).collect();
    trapezoid(&g, v.shape().dx())
}

/// Trapezoidal `∫ v^2`.
pub fn l2_norm_sq(v: &GridDensity) -> f64 {
    let w: Vec<f64> = v.values().iter().map(|p| p * p).collect();
    trapezoid(&w, v.shape().dx())
}

/// Trapezoidal `∫ (v - w)^2` for densities on the same grid.
pub fn l2_distance_sq(v: &GridDensity, w: &GridDensity) -> Result<f64> {
    if v.shape() != w.shape() {
        return Err(Error::param("grid", "densities live on different grids"));
    }
    let d: Vec<f64> = v
        .values()
        .iter()
        .zip(w.values())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok(trapezoid(&d, v.shape().dx()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_on_construction() {
        let mu = ParticleMeasure::new_1d(vec![0.3, -1.0, 0.1]).unwrap();
        assert_eq!(mu.coords(), &[-1.0, 0.1, 0.3]);
        assert!(ParticleMeasure::new_1d(vec![f64::NAN]).is_err());
        assert!(ParticleMeasure::new_1d(vec![]).is_err());
    }

    #[test]
    fn unequal_counts_merge() {
        // δ_0 vs (δ_{-1} + δ_1)/2: cost 1
        let a = ParticleMeasure::new_1d(vec![0.0]).unwrap();
        let b = ParticleMeasure::new_1d(vec![-1.0, 1.0]).unwrap();
        assert!((wasserstein2_1d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // refinement: duplicating atoms does not change the distance
        let c = ParticleMeasure::new_1d(vec![0.0, 2.0]).unwrap();
        let d = ParticleMeasure::new_1d(vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        assert!(wasserstein2_1d(&c, &d).unwrap().abs() < 1e-15);
    }

    #[test]
    fn coverage_error_names_extremes() {
        let mu = ParticleMeasure::new_1d(vec![-2.0, 0.0, 3.0]).unwrap();
        let v = crate::kernels::make_gaussian(0.1, 1).unwrap();
        let err = mollify(&mu, &v, GridShape::new(-1.0, 1.0, 101).unwrap()).unwrap_err();
        match err {
            Error::Coverage { min, max, .. } => {
                assert_eq!(min, -2.0);
                assert_eq!(max, 3.0);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn two_d_rejected_by_transport() {
        let mu = ParticleMeasure::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            wasserstein2_1d(&mu, &mu),
            Err(Error::Unsupported(_))
        ));
    }
}
