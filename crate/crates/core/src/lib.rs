//! Pseudo-spectral solver for the hydrodynamics of nematic liquid
//! crystals with temperature coupling.
//!
//! The state consists of a divergence-free velocity `u`, a symmetric
//! traceless order tensor `Q`, and an absolute temperature `theta`, all
//! periodic on the flat torus `[0, 2*pi)^d` for `d = 2` or `3` (the
//! tensors are always fully three-dimensional; in two dimensions the
//! fields are constant along the third axis).
//!
//! The free energy couples Frobenius elasticity `|grad Q|^2 / 2`, a
//! singular maximum-entropy bulk potential whose eigenvalue domain
//! `(-1/3, 2/3)` encodes the physical bounds of the orientational
//! distribution, a cooling-strength coupling `-U(theta) G(Q)`, and the
//! thermal entropy `-theta log theta`. The time stepper is a first-order
//! IMEX scheme that treats the stiff dissipative terms implicitly in
//! Fourier space and every nonlinear coupling explicitly, preserving the
//! discrete incompressibility and trace constraints exactly.
//!
//! Module map:
//!
//! * [`tensor`] - exact five-component algebra of symmetric traceless
//!   tensors, kinematic couplings, closed-form 3x3 eigensolver;
//! * [`potential`] - the singular bulk potential, its Moreau envelope,
//!   sphere quadrature, and the temperature-dependent material functions;
//! * [`fields`] - grids, spectral transforms and derivatives, projections,
//!   and the binary snapshot format;
//! * [`dynamics`] - the IMEX time stepper: molecular field, stress
//!   assembly, single steps, and whole runs;
//! * [`diagnostics`] - energy and entropy bookkeeping, positivity audits,
//!   and the CSV time-series format;
//! * [`config`] - run configuration parsing and initial-data presets.
//!
//! All floating-point reductions in the library are serial (and
//! compensated where it matters), so every run is bit-reproducible for a
//! fixed configuration, and a run restarted from a snapshot reproduces
//! the original trajectory exactly.

pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod potential;
pub mod tensor;

pub use config::RunConfig;
pub use diagnostics::DiagnosticsRecord;
pub use dynamics::{PotentialMode, SchemeParams, State};
pub use error::CoreError;
pub use fields::{Grid, ScalarField, SpectralEngine, TensorField, VectorField};
pub use potential::{PotentialEval, SphereQuadrature, ThermoFunctions};
pub use tensor::{QTensor, VelGrad};
