//! Run configuration: a flat `key = value` text format with sections,
//! initial-condition presets, and the translation into a ready-to-step
//! state and parameter set.
//!
//! The format is deliberately minimal — sections in brackets, one
//! assignment per line, `#` comments — so configs diff cleanly and can be
//! written by hand or by other tooling without a parser dependency. Every
//! key has a documented default; an empty file is a valid configuration.
//! Parsing fails on the first unknown section or key with its line
//! number, and validation fails on the first out-of-range value with its
//! key path, so a bad config never reaches the solver.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{PotentialMode, SchemeParams, State};
use crate::error::Result as CoreResult;
use crate::fields::{Grid, SpectralEngine};
use crate::potential::{CoefSpec, GSpec, SphereQuadrature, ThermoFunctions, USpec};
use crate::tensor::QTensor;
use nalgebra::Vector3;

/// Configuration failure: I/O, a malformed line, or a value outside its
/// documented range. Kept separate from the solver errors so the command
/// line can map it to a distinct exit code.
#[derive(Debug)]
pub enum ConfigError {
    /// The file could not be read or written.
    Io(std::io::Error),
    /// A line could not be parsed; `line` is 1-based.
    Parse { line: usize, message: String },
    /// A parsed value violates a documented constraint.
    Invalid { key: String, message: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config I/O error: {e}"),
            ConfigError::Parse { line, message } => {
                write!(f, "config parse error at line {line}: {message}")
            }
            ConfigError::Invalid { key, message } => {
                write!(f, "invalid config value for `{key}`: {message}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

/// Named initial-condition recipes. Additive presets may be combined with
/// `+` in the config (`taylor-green-velocity+uniaxial-seed`); the snapshot
/// preset stands alone.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// Zero velocity, zero order tensor, uniform temperature.
    Equilibrium,
    /// Uniform temperature with a small seeded random perturbation of Q,
    /// band-limited by a spectral envelope; combined with a cooling
    /// strength beyond the isotropic stability threshold it triggers a
    /// quench.
    IsotropicQuench,
    /// Weak uniaxial order of strength `0.3 * amplitude` whose director
    /// wobbles in the x1-x2 plane.
    UniaxialSeed,
    /// The classical two-dimensional cellular flow of strength
    /// `0.5 * amplitude`, divergence-free by construction.
    TaylorGreenVelocity,
    /// A smooth periodic temperature bump of height `0.5 * amplitude` on
    /// top of the uniform background.
    HotSpotTheta,
    /// Resume from a binary snapshot; not combinable with other presets.
    Snapshot(PathBuf),
}

impl Preset {
    fn parse(token: &str) -> Option<Preset> {
        match token {
            "equilibrium" => Some(Preset::Equilibrium),
            "isotropic-quench" => Some(Preset::IsotropicQuench),
            "uniaxial-seed" => Some(Preset::UniaxialSeed),
            "taylor-green-velocity" => Some(Preset::TaylorGreenVelocity),
            "hot-spot-theta" => Some(Preset::HotSpotTheta),
            _ => token
                .strip_prefix("snapshot:")
                .map(|p| Preset::Snapshot(PathBuf::from(p))),
        }
    }

    fn name(&self) -> String {
        match self {
            Preset::Equilibrium => "equilibrium".into(),
            Preset::IsotropicQuench => "isotropic-quench".into(),
            Preset::UniaxialSeed => "uniaxial-seed".into(),
            Preset::TaylorGreenVelocity => "taylor-green-velocity".into(),
            Preset::HotSpotTheta => "hot-spot-theta".into(),
            Preset::Snapshot(p) => format!("snapshot:{}", p.display()),
        }
    }
}

/// Fully validated run configuration. Field defaults are what an empty
/// config file yields.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // [grid]
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Points per axis; a power of two, at least 8.
    pub n: usize,

    // [scheme]
    /// Time step.
    pub dt: f64,
    /// Number of steps a `run` performs (CLI `--steps` overrides).
    pub steps: u64,
    /// Flow-alignment parameter.
    pub xi: f64,
    /// Bulk potential mode: the literal `exact` or a positive envelope
    /// parameter.
    pub m: PotentialMode,
    /// Regularization weight (gradient damping, coupling truncation).
    pub delta: f64,
    /// Mollification radius of the rotational coefficient.
    pub epsilon: f64,
    /// Gradient-damping exponent; must lie in (3, 10/3) when delta > 0.
    pub r: f64,
    /// Polar quadrature order for potential evaluations.
    pub quad_polar: usize,
    /// Azimuthal quadrature order for potential evaluations.
    pub quad_azimuth: usize,

    // [thermo]
    /// Material functions (cooling strength, coupling shape, transport
    /// coefficients), untruncated; the scheme applies the `delta`
    /// truncation itself.
    pub thermo: ThermoFunctions,

    // [init]
    /// Initial-condition recipes, applied additively.
    pub presets: Vec<Preset>,
    /// Overall strength multiplier for the presets.
    pub amplitude: f64,
    /// Seed for the band-limited noise of the quench preset.
    pub seed: u64,
    /// Uniform background temperature.
    pub theta0: f64,
    /// Mollification radius applied to the composed initial data
    /// (defaults to `delta`).
    pub mollify: f64,

    // [output]
    /// Diagnostics CSV path.
    pub diagnostics: PathBuf,
    /// Snapshot filename prefix (files are `{prefix}_{step:06}.snap`).
    pub snapshot_prefix: String,
    /// Snapshot cadence in steps; 0 writes only the final state.
    pub snapshot_every: u64,
    /// Diagnostics cadence in steps; first and last steps always record.
    pub diag_every: u64,

    // [tolerance]
    /// Temperature floor whose crossing aborts a run.
    pub theta_floor: f64,
    /// CFL number above which a step is flagged.
    pub cfl_warn: f64,
    /// CFL number above which a step aborts.
    pub cfl_abort: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 2,
            n: 32,
            dt: 1e-3,
            steps: 100,
            xi: 0.5,
            m: PotentialMode::Exact,
            delta: 0.0,
            epsilon: 0.0,
            r: 3.2,
            quad_polar: 16,
            quad_azimuth: 32,
            thermo: ThermoFunctions::default(),
            presets: vec![Preset::Equilibrium],
            amplitude: 1.0,
            seed: 42,
            theta0: 1.0,
            mollify: 0.0,
            diagnostics: PathBuf::from("diagnostics.csv"),
            snapshot_prefix: "state".into(),
            snapshot_every: 0,
            diag_every: 1,
            theta_floor: 1e-10,
            cfl_warn: 0.5,
            cfl_abort: 5.0,
        }
    }
}

fn parse_f64(section: &str, key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse::<f64>().map_err(|_| ConfigError::Invalid {
        key: format!("{section}.{key}"),
        message: format!("expected a number, got `{value}`"),
    })
}

fn parse_usize(section: &str, key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError::Invalid {
        key: format!("{section}.{key}"),
        message: format!("expected a nonnegative integer, got `{value}`"),
    })
}

fn parse_u64(section: &str, key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse::<u64>().map_err(|_| ConfigError::Invalid {
        key: format!("{section}.{key}"),
        message: format!("expected a nonnegative integer, got `{value}`"),
    })
}

/// A transport coefficient: either a bare number (constant) or
/// `rational:<lo>:<hi>:<scale>`.
fn parse_coef(section: &str, key: &str, value: &str) -> Result<CoefSpec, ConfigError> {
    if let Ok(c) = value.parse::<f64>() {
        return Ok(CoefSpec::Constant(c));
    }
    let bad = |message: String| ConfigError::Invalid {
        key: format!("{section}.{key}"),
        message,
    };
    let rest = value.strip_prefix("rational:").ok_or_else(|| {
        bad(format!(
            "expected a number or `rational:<lo>:<hi>:<scale>`, got `{value}`"
        ))
    })?;
    let parts: Vec<&str> = rest.split(':').collect();
    if parts.len() != 3 {
        return Err(bad(format!(
            "`rational:` needs exactly three numbers, got `{value}`"
        )));
    }
    let mut nums = [0.0_f64; 3];
    for (slot, p) in nums.iter_mut().zip(&parts) {
        *slot = p
            .parse::<f64>()
            .map_err(|_| bad(format!("`{p}` in `{value}` is not a number")))?;
    }
    Ok(CoefSpec::Rational {
        lo: nums[0],
        hi: nums[1],
        s: nums[2],
    })
}

fn coef_string(c: &CoefSpec) -> String {
    match *c {
        CoefSpec::Constant(v) => format!("{v}"),
        CoefSpec::Rational { lo, hi, s } => format!("rational:{lo}:{hi}:{s}"),
    }
}

/// Mutable thermo builder so `u_model`/`g_model` and their parameter keys
/// may appear in any order.
struct ThermoDraft {
    u_model: String,
    u_a: f64,
    u_b: f64,
    u_alpha: f64,
    u_theta_star: f64,
    g_model: String,
    g_s0: f64,
    g_cap: f64,
    mu: CoefSpec,
    gamma: CoefSpec,
    kappa: CoefSpec,
}

impl ThermoDraft {
    fn from_default() -> Self {
        let d = ThermoFunctions::default();
        let (u_a, u_b, u_alpha, u_theta_star, u_model) = match d.u {
            USpec::SqrtShifted { a, b } => (a, b, 1.0, 2.0, "sqrt-shifted"),
            USpec::Linear { alpha, theta_star } => (2.0, 1.0, alpha, theta_star, "linear"),
        };
        let (g_s0, g_cap, g_model) = match d.g {
            GSpec::TraceSq => (1.0, 0.5, "trace-sq"),
            GSpec::Capped { s0, cap } => (s0, cap, "capped"),
        };
        ThermoDraft {
            u_model: u_model.into(),
            u_a,
            u_b,
            u_alpha,
            u_theta_star,
            g_model: g_model.into(),
            g_s0,
            g_cap,
            mu: d.viscosity,
            gamma: d.rotational,
            kappa: d.conductivity,
        }
    }

    fn build(&self) -> Result<ThermoFunctions, ConfigError> {
        let u = match self.u_model.as_str() {
            "sqrt-shifted" => USpec::SqrtShifted {
                a: self.u_a,
                b: self.u_b,
            },
            "linear" => USpec::Linear {
                alpha: self.u_alpha,
                theta_star: self.u_theta_star,
            },
            other => {
                return Err(ConfigError::Invalid {
                    key: "thermo.u_model".into(),
                    message: format!("expected `sqrt-shifted` or `linear`, got `{other}`"),
                })
            }
        };
        let g = match self.g_model.as_str() {
            "trace-sq" => GSpec::TraceSq,
            "capped" => GSpec::Capped {
                s0: self.g_s0,
                cap: self.g_cap,
            },
            other => {
                return Err(ConfigError::Invalid {
                    key: "thermo.g_model".into(),
                    message: format!("expected `trace-sq` or `capped`, got `{other}`"),
                })
            }
        };
        Ok(ThermoFunctions::new(u, g, self.mu, self.gamma, self.kappa))
    }
}

/// Parses and validates a configuration from text. Line numbers in errors
/// are 1-based; an empty string yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut thermo = ThermoDraft::from_default();
    let mut section = String::new();
    let mut mollify: Option<f64> = None;
    let mut seen: Vec<String> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                message: format!("unterminated section header `{raw}`"),
            })?;
            match name {
                "grid" | "scheme" | "thermo" | "init" | "output" | "tolerance" => {
                    section = name.to_string();
                }
                other => {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        message: format!("unknown section `[{other}]`"),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: lineno,
            message: format!("expected `key = value`, got `{raw}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if section.is_empty() {
            return Err(ConfigError::Parse {
                line: lineno,
                message: format!("key `{key}` appears before any section header"),
            });
        }
        let path = format!("{section}.{key}");
        if seen.contains(&path) {
            return Err(ConfigError::Parse {
                line: lineno,
                message: format!("duplicate key `{path}`"),
            });
        }
        seen.push(path);

        match (section.as_str(), key) {
            ("grid", "dim") => cfg.dim = parse_usize(&section, key, value)?,
            ("grid", "n") => cfg.n = parse_usize(&section, key, value)?,
            ("scheme", "dt") => cfg.dt = parse_f64(&section, key, value)?,
            ("scheme", "steps") => cfg.steps = parse_u64(&section, key, value)?,
            ("scheme", "xi") => cfg.xi = parse_f64(&section, key, value)?,
            ("scheme", "m") => {
                cfg.m = if value == "exact" {
                    PotentialMode::Exact
                } else {
                    PotentialMode::Moreau(parse_f64(&section, key, value)?)
                }
            }
            ("scheme", "delta") => cfg.delta = parse_f64(&section, key, value)?,
            ("scheme", "epsilon") => cfg.epsilon = parse_f64(&section, key, value)?,
            ("scheme", "r") => cfg.r = parse_f64(&section, key, value)?,
            ("scheme", "quad_polar") => cfg.quad_polar = parse_usize(&section, key, value)?,
            ("scheme", "quad_azimuth") => cfg.quad_azimuth = parse_usize(&section, key, value)?,
            ("thermo", "u_model") => thermo.u_model = value.to_string(),
            ("thermo", "u_a") => thermo.u_a = parse_f64(&section, key, value)?,
            ("thermo", "u_b") => thermo.u_b = parse_f64(&section, key, value)?,
            ("thermo", "u_alpha") => thermo.u_alpha = parse_f64(&section, key, value)?,
            ("thermo", "u_theta_star") => {
                thermo.u_theta_star = parse_f64(&section, key, value)?
            }
            ("thermo", "g_model") => thermo.g_model = value.to_string(),
            ("thermo", "g_s0") => thermo.g_s0 = parse_f64(&section, key, value)?,
            ("thermo", "g_cap") => thermo.g_cap = parse_f64(&section, key, value)?,
            ("thermo", "mu") => thermo.mu = parse_coef(&section, key, value)?,
            ("thermo", "gamma") => thermo.gamma = parse_coef(&section, key, value)?,
            ("thermo", "kappa") => thermo.kappa = parse_coef(&section, key, value)?,
            ("init", "preset") => {
                let mut presets = Vec::new();
                for token in value.split('+') {
                    let token = token.trim();
                    let p = Preset::parse(token).ok_or_else(|| ConfigError::Invalid {
                        key: "init.preset".into(),
                        message: format!("unknown preset `{token}`"),
                    })?;
                    presets.push(p);
                }
                cfg.presets = presets;
            }
            ("init", "amplitude") => cfg.amplitude = parse_f64(&section, key, value)?,
            ("init", "seed") => cfg.seed = parse_u64(&section, key, value)?,
            ("init", "theta0") => cfg.theta0 = parse_f64(&section, key, value)?,
            ("init", "mollify") => mollify = Some(parse_f64(&section, key, value)?),
            ("output", "diagnostics") => cfg.diagnostics = PathBuf::from(value),
            ("output", "snapshot_prefix") => cfg.snapshot_prefix = value.to_string(),
            ("output", "snapshot_every") => {
                cfg.snapshot_every = parse_u64(&section, key, value)?
            }
            ("output", "diag_every") => cfg.diag_every = parse_u64(&section, key, value)?,
            ("tolerance", "theta_floor") => cfg.theta_floor = parse_f64(&section, key, value)?,
            ("tolerance", "cfl_warn") => cfg.cfl_warn = parse_f64(&section, key, value)?,
            ("tolerance", "cfl_abort") => cfg.cfl_abort = parse_f64(&section, key, value)?,
            (_, _) => {
                return Err(ConfigError::Parse {
                    line: lineno,
                    message: format!("unknown key `{key}` in section `[{section}]`"),
                })
            }
        }
    }

    cfg.thermo = thermo.build()?;
    cfg.mollify = mollify.unwrap_or(cfg.delta);
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    parse_config(&text)
}

impl RunConfig {
    /// Checks every value against its documented range; reports the first
    /// violation with its key path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| {
            Err(ConfigError::Invalid {
                key: key.into(),
                message,
            })
        };
        if Grid::new(self.n, self.dim).is_err() {
            return bad(
                "grid.n",
                format!(
                    "grid must have a power-of-two size of at least 8 in dimension 2 or 3, \
                     got n = {}, dim = {}",
                    self.n, self.dim
                ),
            );
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("scheme.dt", format!("time step must be positive, got {}", self.dt));
        }
        if !self.xi.is_finite() {
            return bad("scheme.xi", "flow-alignment parameter must be finite".into());
        }
        if let PotentialMode::Moreau(m) = self.m {
            if !(m > 0.0 && m.is_finite()) {
                return bad(
                    "scheme.m",
                    format!("envelope parameter must be positive or the literal `exact`, got {m}"),
                );
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad("scheme.delta", format!("must be nonnegative, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("scheme.epsilon", format!("must be nonnegative, got {}", self.epsilon));
        }
        if self.delta > 0.0 && !(self.r > 3.0 && self.r < 10.0 / 3.0) {
            return bad(
                "scheme.r",
                format!(
                    "gradient-damping exponent must satisfy r ∈ (3, 10/3) when delta > 0, got {}",
                    self.r
                ),
            );
        }
        if self.quad_polar < 4 || self.quad_azimuth < 8 {
            return bad(
                "scheme.quad_polar",
                format!(
                    "quadrature needs at least 4 polar and 8 azimuthal nodes, got {} x {}",
                    self.quad_polar, self.quad_azimuth
                ),
            );
        }
        if let Some(msg) = self.thermo.hypothesis_violation() {
            return bad("thermo", msg);
        }
        if self.presets.is_empty() {
            return bad("init.preset", "at least one preset is required".into());
        }
        let has_snapshot = self
            .presets
            .iter()
            .any(|p| matches!(p, Preset::Snapshot(_)));
        if has_snapshot && self.presets.len() > 1 {
            return bad(
                "init.preset",
                "the snapshot preset cannot be combined with others".into(),
            );
        }
        if !(self.amplitude.is_finite()) {
            return bad("init.amplitude", "must be finite".into());
        }
        if !(self.theta0 > 0.0 && self.theta0.is_finite()) {
            return bad(
                "init.theta0",
                format!("background temperature must be positive, got {}", self.theta0),
            );
        }
        if !(self.mollify >= 0.0 && self.mollify.is_finite()) {
            return bad("init.mollify", format!("must be nonnegative, got {}", self.mollify));
        }
        if !(self.theta_floor > 0.0 && self.theta_floor.is_finite()) {
            return bad(
                "tolerance.theta_floor",
                format!("must be positive, got {}", self.theta_floor),
            );
        }
        if !(self.cfl_warn > 0.0 && self.cfl_abort >= self.cfl_warn) {
            return bad(
                "tolerance.cfl_abort",
                format!(
                    "need 0 < cfl_warn <= cfl_abort, got {} and {}",
                    self.cfl_warn, self.cfl_abort
                ),
            );
        }
        Ok(())
    }

    /// Canonical text form: every key explicit, fixed order, so configs
    /// round-trip exactly and diffs stay meaningful.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let (u_model, u_params) = match self.thermo.u {
            USpec::SqrtShifted { a, b } => {
                ("sqrt-shifted", format!("u_a = {a}\nu_b = {b}\n"))
            }
            USpec::Linear { alpha, theta_star } => (
                "linear",
                format!("u_alpha = {alpha}\nu_theta_star = {theta_star}\n"),
            ),
        };
        let (g_model, g_params) = match self.thermo.g {
            GSpec::TraceSq => ("trace-sq", String::new()),
            GSpec::Capped { s0, cap } => ("capped", format!("g_s0 = {s0}\ng_cap = {cap}\n")),
        };
        let m = match self.m {
            PotentialMode::Exact => "exact".to_string(),
            PotentialMode::Moreau(m) => format!("{m}"),
        };
        let presets: Vec<String> = self.presets.iter().map(|p| p.name()).collect();
        out.push_str(&format!(
            "[grid]\ndim = {}\nn = {}\n\n",
            self.dim, self.n
        ));
        out.push_str(&format!(
            "[scheme]\ndt = {}\nsteps = {}\nxi = {}\nm = {}\ndelta = {}\nepsilon = {}\nr = {}\nquad_polar = {}\nquad_azimuth = {}\n\n",
            self.dt, self.steps, self.xi, m, self.delta, self.epsilon, self.r,
            self.quad_polar, self.quad_azimuth
        ));
        out.push_str(&format!(
            "[thermo]\nu_model = {}\n{}g_model = {}\n{}mu = {}\ngamma = {}\nkappa = {}\n\n",
            u_model,
            u_params,
            g_model,
            g_params,
            coef_string(&self.thermo.viscosity),
            coef_string(&self.thermo.rotational),
            coef_string(&self.thermo.conductivity)
        ));
        out.push_str(&format!(
            "[init]\npreset = {}\namplitude = {}\nseed = {}\ntheta0 = {}\nmollify = {}\n\n",
            presets.join("+"),
            self.amplitude,
            self.seed,
            self.theta0,
            self.mollify
        ));
        out.push_str(&format!(
            "[output]\ndiagnostics = {}\nsnapshot_prefix = {}\nsnapshot_every = {}\ndiag_every = {}\n\n",
            self.diagnostics.display(),
            self.snapshot_prefix,
            self.snapshot_every,
            self.diag_every
        ));
        out.push_str(&format!(
            "[tolerance]\ntheta_floor = {}\ncfl_warn = {}\ncfl_abort = {}\n",
            self.theta_floor, self.cfl_warn, self.cfl_abort
        ));
        out
    }

    /// Scheme parameters implied by this configuration.
    pub fn scheme_params(&self) -> SchemeParams {
        let mut params = SchemeParams::new(
            self.dt,
            self.xi,
            self.m,
            self.delta,
            self.epsilon,
            self.r,
            &self.thermo,
            SphereQuadrature::new(self.quad_polar, self.quad_azimuth),
        );
        params.theta_floor = self.theta_floor;
        params.cfl_warn = self.cfl_warn;
        params.cfl_abort = self.cfl_abort;
        params
    }

    /// Builds the initial state and scheme parameters. Additive presets
    /// compose on top of the equilibrium background; the result is
    /// dealiased (u, Q), projected divergence-free, and optionally
    /// mollified. A snapshot preset loads the state verbatim (its grid
    /// wins over the `[grid]` section).
    pub fn build(&self) -> CoreResult<(State, SchemeParams)> {
        let params = self.scheme_params();
        if let [Preset::Snapshot(path)] = self.presets.as_slice() {
            let state = State::load(path).map_err(|e| match e {
                crate::error::CoreError::Io(io) => crate::error::CoreError::Io(
                    std::io::Error::new(io.kind(), format!("{}: {io}", path.display())),
                ),
                other => other,
            })?;
            return Ok((state, params));
        }

        let grid = Grid::new(self.n, self.dim)?;
        let mut state = State::uniform(grid, self.theta0);
        for preset in &self.presets {
            self.apply_preset(preset, &mut state);
        }

        let engine = SpectralEngine::new(grid);
        if self.mollify > 0.0 {
            for c in &mut state.u.comps {
                *c = engine.mollify_plane(c, self.mollify);
            }
            for c in &mut state.q.comps {
                *c = engine.mollify_plane(c, self.mollify);
            }
            state.theta.data = engine.mollify_plane(&state.theta.data, self.mollify);
        }
        // Band-limit u and Q and restore exact incompressibility; the
        // temperature is left untouched to preserve its pointwise bounds.
        for c in &mut state.u.comps {
            let mut spec = engine.forward(c);
            engine.dealias_spec(&mut spec);
            *c = engine.inverse(&spec);
        }
        for c in &mut state.q.comps {
            let mut spec = engine.forward(c);
            engine.dealias_spec(&mut spec);
            *c = engine.inverse(&spec);
        }
        state.u = engine.leray_project(&state.u);
        Ok((state, params))
    }

    fn apply_preset(&self, preset: &Preset, state: &mut State) {
        let grid = state.grid;
        match preset {
            Preset::Equilibrium | Preset::Snapshot(_) => {}
            Preset::TaylorGreenVelocity => {
                let a = 0.5 * self.amplitude;
                for idx in 0..grid.len() {
                    let x = grid.point(idx);
                    state.u.comps[0][idx] += a * x[0].sin() * x[1].cos();
                    state.u.comps[1][idx] -= a * x[0].cos() * x[1].sin();
                }
            }
            Preset::UniaxialSeed => {
                let s0 = 0.3 * self.amplitude;
                let wobble = 0.5;
                for idx in 0..grid.len() {
                    let x = grid.point(idx);
                    let phi = wobble * x[0].sin() * x[1].sin();
                    let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
                    let q = QTensor::uniaxial(s0, &n);
                    let old = state.q.get(idx);
                    state.q.set(idx, old + q);
                }
            }
            Preset::HotSpotTheta => {
                let h = 0.5 * self.amplitude;
                let w2 = 0.8_f64 * 0.8;
                for idx in 0..grid.len() {
                    let x = grid.point(idx);
                    let mut bump = 1.0;
                    for d in 0..grid.dim() {
                        bump *= ((x[d].cos() - 1.0) / w2).exp();
                    }
                    state.theta.data[idx] += h * bump;
                }
            }
            Preset::IsotropicQuench => {
                // Seeded white noise per tensor component, band-limited by
                // a smooth spectral envelope so the perturbation is tiny
                // but well resolved.
                let engine = SpectralEngine::new(grid);
                let scale = 0.05 * self.amplitude;
                let k_cut = (grid.n() as f64) / 6.0;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for c in &mut state.q.comps {
                    let mut noise = vec![0.0_f64; grid.len()];
                    for v in &mut noise {
                        *v = rng.random_range(-1.0..1.0);
                    }
                    let mut spec = engine.forward(&noise);
                    for (z, &k2) in spec.iter_mut().zip(engine.k2()) {
                        *z *= (-k2 / (k_cut * k_cut)).exp();
                    }
                    let smooth = engine.inverse(&spec);
                    let peak = smooth.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                    let norm = if peak > 0.0 { scale / peak } else { 0.0 };
                    for (dst, v) in c.iter_mut().zip(&smooth) {
                        *dst += norm * v;
                    }
                }
            }
        }
    }
}
