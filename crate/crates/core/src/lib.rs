//! Numerical laboratory for nonlocal interaction equations with localising
//! kernels `W_eps = V_eps * V_eps`.
//!
//! The crate provides
//! * mollifier and interaction kernels (closed form and tabulated),
//! * equal-weight particle measures and grid densities with 1-D transport distances,
//! * the interaction / relative energies and the commutator ("excess") fields,
//! * a Lagrangian JKO solver (single species and semi-implicit two-species),
//! * an RK4 particle-ODE solver used for cross-validation,
//! * the Barenblatt reference for `d_t rho = 1/2 (rho^2)_xx` and weak-form residuals,
//! * diagnostics that turn recorded trajectories into pass/fail verdicts,
//! * a configuration-driven runner that persists and replays every artifact.

pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod io;
pub mod jko;
pub mod kernels;
pub mod measures;
pub mod pode;
pub mod quad;
pub mod reference;
pub mod runner;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("kernel tabulation under-resolved: estimated interpolation error {estimate:.3e} exceeds {limit:.1e}")]
    Resolution { estimate: f64, limit: f64 },

    #[error("invalid kernel samples: {0}")]
    KernelSamples(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("particles outside grid [{a}, {b}]: extreme positions {min} and {max}")]
    Coverage { a: f64, b: f64, min: f64, max: f64 },

    #[error("assumption (A) violated: need min{{A11,A22}} > (A12+A21)/2 >= 0, got {0}")]
    Assumption(String),

    #[error("inner solver did not converge after {iters} iterations (residual {residual:.3e}, tolerance {tol:.1e})")]
    NonConvergence {
        iters: usize,
        residual: f64,
        tol: f64,
    },

    #[error("particle ordering violated by the minimiser (first inversion at index {index}); reduce tau")]
    Ordering { index: usize },

    #[error("non-finite particle position at step {step}")]
    BlowUp { step: usize },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("species {species}: {source}")]
    Species {
        species: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("artifact integrity: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Param {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
