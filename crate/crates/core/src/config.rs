//! Run configuration (TOML). Unknown keys are hard errors.
//!
//! ```toml
//! problem = "nlie"            # nlie | nlis | pme-reference
//! solver = "jko"              # jko | ode
//! n = 200
//! eps = 0.2                   # or: epsilons = [0.4, 0.2, 0.1, 0.05]
//! tau = 1e-3                  # jko
//! dt = 2e-4                   # ode
//! t_end = 0.3
//! sample_times = [0.0, 0.3]   # mollified snapshots to persist
//! test_functions = ["bump(0,1)"]
//!
//! [kernel]                    # gaussian {sigma} | laplace {ell} | custom {path}
//! family = "gaussian"
//! sigma = 1.0
//!
//! [grid]                      # m may be omitted: then dx = min(eps)/5
//! a = -4.0
//! b = 4.0
//! m = 801
//!
//! [initial]                   # barenblatt {t0} | uniform {a, b} | csv {path}
//! kind = "barenblatt"
//! t0 = 1.0
//! ```
//!
//! Two-species runs add `[matrix]` (`a11 a12 a21 a22`), and optionally
//! `[kernel2]`, `[initial2]` and `[cross_weight]` (default: Dirac).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{default_test_functions, DiffusionMatrix, TestFunction};
use crate::jko::{JkoConfig, OrderingPolicy};
use crate::kernels::{
    make_custom, make_gaussian, make_laplace, CrossWeight, MollifierKernel, SampledProfile,
};
use crate::measures::{GridDensity, GridShape};
use crate::pode::{Integrator, OdeConfig};
use crate::reference::BarenblattProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    Nlie,
    Nlis,
    PmeReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Jko,
    Ode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Laplace { ell: f64 },
    Custom { path: PathBuf },
}

impl KernelSpec {
    /// The unit-scale mollifier `V1`.
    pub fn build(&self) -> Result<MollifierKernel> {
        match self {
            KernelSpec::Gaussian { sigma } => make_gaussian(*sigma, 1),
            KernelSpec::Laplace { ell } => make_laplace(*ell, 1),
            KernelSpec::Custom { path } => Ok(make_custom(SampledProfile::from_csv(path)?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    Barenblatt { t0: f64 },
    Uniform { a: f64, b: f64 },
    Csv { path: PathBuf },
}

impl InitialSpec {
    /// Initial density sampled on `grid` and normalised.
    pub fn density(&self, grid: GridShape) -> Result<GridDensity> {
        match self {
            InitialSpec::Barenblatt { t0 } => BarenblattProfile::new(*t0)?.grid(0.0, grid),
            InitialSpec::Uniform { a, b } => GridDensity::uniform(grid, *a, *b)?.normalized(),
            InitialSpec::Csv { path } => {
                let (xs, vs) = crate::io::read_xy(path, "value")?;
                let interp = |x: f64| -> f64 {
                    let k = xs.partition_point(|&p| p <= x);
                    if k == 0 || k == xs.len() {
                        return if k > 0 && x == xs[k - 1] {
                            vs[k - 1]
                        } else {
                            0.0
                        };
                    }
                    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                    (1.0 - w) * vs[k - 1] + w * vs[k]
                };
                GridDensity::from_fn(grid, interp)?.normalized()
            }
        }
    }

    /// Closed support of the initial datum.
    pub fn support(&self) -> Result<(f64, f64)> {
        match self {
            InitialSpec::Barenblatt { t0 } => {
                let w = BarenblattProfile::new(*t0)?.half_width(0.0)?;
                Ok((-w, w))
            }
            InitialSpec::Uniform { a, b } => Ok((*a, *b)),
            InitialSpec::Csv { path } => {
                let (xs, vs) = crate::io::read_xy(path, "value")?;
                let mut nz = xs
                    .iter()
                    .zip(&vs)
                    .filter(|(_, v)| **v > 0.0)
                    .map(|(x, _)| *x);
                let first = nz.next().ok_or_else(|| {
                    Error::Degenerate(format!("{}: zero density", path.display()))
                })?;
                let last = nz.last().unwrap_or(first);
                Ok((first, last))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

impl GridSpec {
    /// Explicit `m`, or spacing `dx` when omitted.
    pub fn shape(&self, dx: f64) -> Result<GridShape> {
        match self.m {
            Some(m) => GridShape::new(self.a, self.b, m),
            None => GridShape::with_spacing(self.a, self.b, dx),
        }
    }
}

/// Inner-solver options of the JKO solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub ordering: OrderingPolicy,
}

impl Default for JkoOptions {
    fn default() -> Self {
        let d = JkoConfig::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            armijo_c: d.armijo_c,
            shrink: d.shrink,
            ordering: d.ordering,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeOptions {
    pub integrator: Integrator,
    pub record_every: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            integrator: Integrator::Rk4,
            record_every: 1,
        }
    }
}

/// Thresholds of the default checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckOptions {
    /// Slack of the per-step energy inequality.
    pub energy_slack: f64,
    /// Sampled times for the Hölder check.
    pub holder_samples: usize,
    /// Allowed upward fluctuation of the mollified entropy.
    pub entropy_tol: f64,
    /// Per-step species gap for symmetric two-species runs.
    pub species_gap: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            energy_slack: 1e-8,
            holder_samples: 20,
            entropy_tol: 1e-2,
            species_gap: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilons: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub sample_times: Vec<f64>,
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel2: Option<KernelSpec>,
    #[serde(default = "dirac")]
    pub cross_weight: CrossWeight,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<DiffusionMatrix>,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial2: Option<InitialSpec>,
    #[serde(default)]
    pub jko: JkoOptions,
    #[serde(default)]
    pub ode: OdeOptions,
    #[serde(default)]
    pub checks: CheckOptions,
}

fn dirac() -> CrossWeight {
    CrossWeight::Dirac
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| {
            Error::config(
                e.span()
                    .map_or("<root>".to_string(), |r| format!("bytes {r:?}")),
                e.message(),
            )
        })
    }

    /// Loads, resolves relative paths against the file's directory, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for k in [&mut cfg.kernel, &mut cfg.kernel2].into_iter().flatten() {
            if let KernelSpec::Custom { path } = k {
                resolve(base, path);
            }
        }
        for i in [Some(&mut cfg.initial), cfg.initial2.as_mut()]
            .into_iter()
            .flatten()
        {
            if let InitialSpec::Csv { path } = i {
                resolve(base, path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<serialise>", e.to_string()))
    }

    /// The ε values of this configuration (`epsilons`, else `eps`).
    pub fn eps_list(&self) -> Vec<f64> {
        if self.epsilons.is_empty() {
            self.eps.into_iter().collect()
        } else {
            self.epsilons.clone()
        }
    }

    /// A copy pinned to a single ε.
    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps: Some(eps),
            epsilons: Vec::new(),
            ..self.clone()
        }
    }

    /// Step size of the configured solver.
    pub fn step_size(&self) -> Result<f64> {
        let (name, v) = match self.solver {
            Solver::Jko => ("tau", self.tau),
            Solver::Ode => ("dt", self.dt),
        };
        v.ok_or_else(|| {
            Error::config(
                name,
                format!("required by solver `{:?}`", self.solver).to_lowercase(),
            )
        })
    }

    pub fn jko_config(&self) -> Result<JkoConfig> {
        let o = self.jko;
        Ok(JkoConfig {
            tau: self.step_size()?,
            t_end: self.t_end,
            tol: o.tol,
            max_iter: o.max_iter,
            armijo_c: o.armijo_c,
            shrink: o.shrink,
            ordering: o.ordering,
        })
    }

    pub fn ode_config(&self) -> Result<OdeConfig> {
        Ok(OdeConfig {
            dt: self.step_size()?,
            t_end: self.t_end,
            integrator: self.ode.integrator,
            record_every: self.ode.record_every,
        })
    }

    /// The monitoring grid: explicit `m`, else spacing `min(ε)/5`.
    pub fn grid_shape(&self) -> Result<GridShape> {
        let min_eps = self.eps_list().into_iter().fold(f64::INFINITY, f64::min);
        let dx = if min_eps.is_finite() {
            min_eps / 5.0
        } else {
            (self.grid.b - self.grid.a) / 1000.0
        };
        self.grid
            .shape(dx)
            .map_err(|e| Error::config("grid", e.to_string()))
    }

    pub fn kernel_spec(&self) -> Result<&KernelSpec> {
        self.kernel
            .as_ref()
            .ok_or_else(|| Error::config("kernel", "missing block"))
    }

    pub fn kernel2_spec(&self) -> Result<&KernelSpec> {
        self.kernel2.as_ref().map_or_else(|| self.kernel_spec(), Ok)
    }

    pub fn initial2_spec(&self) -> &InitialSpec {
        self.initial2.as_ref().unwrap_or(&self.initial)
    }

    pub fn matrix(&self) -> Result<DiffusionMatrix> {
        self.matrix
            .ok_or_else(|| Error::config("matrix", "required by problem `nlis`"))
    }

    /// Cross-field validation with field paths.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |path: &str, e: Error| Error::config(path, e.to_string());
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("t_end", "must be positive"));
        }
        let grid = self.grid_shape()?;
        for (k, t) in self.sample_times.iter().enumerate() {
            if !(*t >= 0.0 && *t <= self.t_end * (1.0 + 1e-12)) {
                return Err(Error::config(
                    format!("sample_times[{k}]"),
                    format!("{t} is outside [0, t_end]"),
                ));
            }
        }
        for (k, phi) in self.test_functions.iter().enumerate() {
            let (lo, hi) = phi.support();
            if lo < grid.a || hi > grid.b {
                return Err(Error::config(
                    format!("test_functions[{k}]"),
                    format!("{phi} is not supported inside the grid"),
                ));
            }
        }
        if self.problem == Problem::PmeReference {
            if !matches!(self.initial, InitialSpec::Barenblatt { .. }) {
                return Err(Error::config(
                    "initial.kind",
                    "pme-reference needs a barenblatt datum",
                ));
            }
            return self
                .initial
                .support()
                .map(|_| ())
                .map_err(|e| cfg_err("initial", e));
        }
        if self.eps.is_some() && !self.epsilons.is_empty() {
            return Err(Error::config(
                "epsilons",
                "give either `eps` or `epsilons`, not both",
            ));
        }
        let eps = self.eps_list();
        if eps.is_empty() {
            return Err(Error::config("eps", "missing (give `eps` or `epsilons`)"));
        }
        for (k, e) in eps.iter().enumerate() {
            if !(*e > 0.0 && e.is_finite()) {
                return Err(Error::config(format!("epsilons[{k}]"), "must be positive"));
            }
        }
        if self.n < 2 {
            return Err(Error::config("n", "need at least 2 particles"));
        }
        match self.solver {
            Solver::Jko => self
                .jko_config()?
                .validate()
                .map_err(|e| cfg_err("jko", e))?,
            Solver::Ode => self
                .ode_config()?
                .validate()
                .map_err(|e| cfg_err("ode", e))?,
        }
        self.kernel_spec()?;
        if self.problem == Problem::Nlis {
            self.matrix()?
                .validate()
                .map_err(|e| cfg_err("matrix", e))?;
            self.cross_weight
                .validate()
                .map_err(|e| cfg_err("cross_weight", e))?;
        } else if self.matrix.is_some() || self.kernel2.is_some() || self.initial2.is_some() {
            return Err(Error::config(
                "matrix",
                "two-species blocks are only valid for problem `nlis`",
            ));
        }
        let max_eps = eps.iter().copied().fold(0.0, f64::max);
        let mut initials = vec![("initial", &self.initial)];
        if self.problem == Problem::Nlis {
            initials.push(("initial2", self.initial2_spec()));
        }
        for (name, init) in initials {
            let (lo, hi) = init.support().map_err(|e| cfg_err(name, e))?;
            let margin = 8.0 * max_eps;
            if lo - margin < grid.a || hi + margin > grid.b {
                return Err(Error::config(
                    "grid",
                    format!(
                        "[{}, {}] must cover the initial support [{lo:.4}, {hi:.4}] plus 8 max(eps) = {margin}",
                        grid.a, grid.b
                    ),
                ));
            }
        }
        Ok(())
    }
}
