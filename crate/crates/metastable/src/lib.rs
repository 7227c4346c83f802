//! Simulation and verification toolkit for metastable stochastic dynamics.
//!
//! The crate samples exit events from metastable states of overdamped Langevin
//! diffusions, accelerates them with the Parallel Replica algorithm built on
//! quasi-stationary distributions (QSD), parametrizes jump-Markov (kinetic
//! Monte Carlo) models via Eyring-Kramers rates, and cross-validates all three
//! against a direct spectral solve of the absorbed Fokker-Planck generator.
//!
//! Module map:
//! - [`landscape`]: potential energy functions, gradients, critical points
//! - [`geometry`]: metastable domains, boundary regions, exit classification,
//!   Agmon distances
//! - [`sde`]: Euler-Maruyama integration and raw exit-event sampling
//! - [`fleming_viot`]: QSD sampling with a Gelman-Rubin stationarity diagnostic
//! - [`parrep`]: the Parallel Replica algorithm (decorrelation / dephasing /
//!   parallel step) and its Fleming-Viot variant
//! - [`rates`]: Eyring-Kramers prefactors, exit distributions, rate tables
//! - [`kmc`]: continuous-time jump Markov process simulation
//! - [`spectral`]: finite-difference eigensolve of the absorbed generator,
//!   the numerical oracle for everything else
//! - [`stats`]: statistical tests used by the verification harness

pub mod fleming_viot;
pub mod geometry;
pub mod kmc;
pub mod landscape;
pub mod parrep;
pub mod rates;
pub mod rng;
pub mod sde;
pub mod spectral;
pub mod stats;

use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input error: {0}")]
    Input(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("degenerate boundary critical point: {0}")]
    Degeneracy(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("numerical blow-up (timestep too large?): {0}")]
    NonFinite(String),

    /// Step budget exhausted; carries the in-flight state.
    #[error("step budget exhausted after {steps} steps")]
    Timeout { steps: u64, state: Vec<f64> },

    #[error("all particles exited the domain in a single step")]
    Extinction,

    #[error(
        "dephasing acceptance rate {rate:.3e} below {min:.1e}: state not metastable at this temperature"
    )]
    PathologicalState { rate: f64, min: f64 },

    #[error("grid resolution check failed: {0}")]
    Resolution(String),

    #[error("state {0} is absorbing")]
    Absorbing(usize),

    #[error("eigenvalue gap below 1e-10: cannot separate the leading pair")]
    EigenvalueDegeneracy,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
