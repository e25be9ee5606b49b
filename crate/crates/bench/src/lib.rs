//! Shared fixtures for the kernel benchmarks: representative states and
//! parameter sets at the standard desk scale, built through the public
//! configuration layer so the benchmarks measure exactly what a run does.

use lcflow_core::config::parse_config;
use lcflow_core::dynamics::{SchemeParams, State};

/// A driven 2-D state at the desk scale (64^2): cellular flow plus a
/// wobbled uniaxial seed, envelope potential.
pub fn driven_state_64() -> (State, SchemeParams) {
    let cfg = parse_config(
        "[grid]
n = 64
[scheme]
dt = 1e-3
m = 100
delta = 1e-3
r = 3.2
[init]
preset = taylor-green-velocity+uniaxial-seed
amplitude = 0.5
",
    )
    .expect("benchmark config is valid");
    cfg.build().expect("benchmark state builds")
}
