//! Error types shared across the solver.

use thiserror::Error;

/// Errors produced by the tensor algebra, potential evaluators, and the
/// time stepper.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A matrix that must be symmetric was not (within tolerance).
    #[error("matrix is not symmetric: |h - h^t| = {asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asym: f64, tol: f64 },

    /// An eigenvalue of `Q` left the physical domain `(-1/3, 2/3)` where
    /// the singular potential is finite.
    #[error(
        "Q eigenvalues [{lambda_min:.6}, {lambda_max:.6}] outside the physical domain \
         (-1/3 + {margin:.1e}, 2/3 - {margin:.1e})"
    )]
    DomainViolation {
        lambda_min: f64,
        lambda_max: f64,
        margin: f64,
    },

    /// A Newton or proximal iteration failed to reach its tolerance.
    #[error("{what}: no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iters: u32,
        residual: f64,
    },

    /// A thermodynamic evaluation was requested at `theta <= 0`.
    #[error("nonpositive temperature: theta = {theta:.6e}")]
    NonpositiveTemperature { theta: f64 },

    /// The temperature minimum dropped to the floor or below zero during a
    /// step; positivity must hold by the physics of the scheme, so this is
    /// a hard failure (time step too large or regularization too weak).
    #[error("temperature collapse at step {step}: min theta = {theta_min:.6e}")]
    TemperatureCollapse { theta_min: f64, step: u64 },

    /// The advective CFL number exceeded the hard abort threshold.
    #[error("CFL number {cfl:.3} exceeds the abort threshold {limit:.3}; reduce dt")]
    CflExceeded { cfl: f64, limit: f64 },

    /// A grid was requested with an unsupported size or dimension.
    #[error("invalid grid: n = {n} must be a power of two >= 8 and dim = {dim} must be 2 or 3")]
    InvalidGrid { n: usize, dim: usize },

    /// A snapshot file was malformed or inconsistent with expectations.
    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    /// Too few diagnostics records for a history-based quantity.
    #[error("insufficient history: need at least {need} records, have {have}")]
    InsufficientHistory { need: usize, have: usize },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shorthand result type for fallible solver operations.
pub type Result<T> = std::result::Result<T, CoreError>;
