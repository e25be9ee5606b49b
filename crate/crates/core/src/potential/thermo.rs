//! Temperature-dependent material functions: the cooling strength `U`,
//! the isotropic coupling `G`, and the transport coefficients.
//!
//! The cooling strength `U` multiplies `G(Q)` in the free energy and
//! drives the isotropic-nematic transition: ordering releases energy
//! where `U > 0` and the isotropic state destabilizes once `U` exceeds
//! the curvature `15/4` of the bulk potential at `Q = 0`. The structural
//! assumptions are `U(0) > 0`, `U' <= 0`, and `U` convex, so cooling
//! favors order and heating disorders.
//!
//! For the energy estimates behind the scheme, `U` is truncated above a
//! cutoff temperature `theta_c = 1/delta`: beyond the cutoff the raw
//! function is replaced by a bounded exponential tail glued with matching
//! value, slope, and (when the model is strictly convex) curvature, so
//! the truncation preserves monotonicity, convexity, and smoothness while
//! making `U` and `U'` bounded. `delta = 0` disables the truncation.

use crate::tensor::QTensor;

/// Model for the cooling strength `U(theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum USpec {
    /// `U = a - b sqrt(1 + theta)`: strictly convex, decreasing for
    /// `b > 0`, with `sqrt(theta) |U'|` bounded by `b/2`.
    SqrtShifted { a: f64, b: f64 },
    /// `U = alpha (theta_star - theta)`: affine, decreasing for
    /// `alpha > 0`. Useful for analytic cross-checks; note that
    /// `sqrt(theta) |U'|` is unbounded for this model, so the positivity
    /// audit falls back to the observed temperature range.
    Linear { alpha: f64, theta_star: f64 },
}

impl USpec {
    /// Raw `(U, U', U'')` without truncation, for `theta >= 0`.
    fn eval_raw(&self, theta: f64) -> (f64, f64, f64) {
        match *self {
            USpec::SqrtShifted { a, b } => {
                let s = (1.0 + theta).sqrt();
                (a - b * s, -0.5 * b / s, 0.25 * b / (s * s * s))
            }
            USpec::Linear { alpha, theta_star } => (alpha * (theta_star - theta), -alpha, 0.0),
        }
    }
}

/// Precomputed exponential tail replacing `U` above `theta_c`:
/// `U(theta) = u_inf + c * exp(-(theta - theta_c) / k)` with
/// `c = -k U'(theta_c)`, which matches value and slope at the cutoff and
/// matches curvature too when `k = -U'/U''` is finite there.
#[derive(Clone, Copy, Debug, PartialEq)]
struct UGlue {
    theta_c: f64,
    k: f64,
    c: f64,
    u_inf: f64,
}

/// Model for the isotropic coupling `G(Q) = g(|Q|^2)`.
///
/// Isotropy means the tensor derivative `dG/dQ = 2 g'(|Q|^2) Q` always
/// commutes with `Q`, which the heat-source assembly exploits; the
/// traceless projection of the derivative is the derivative itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GSpec {
    /// `G = |Q|^2`: the minimal coupling. Already bounded with bounded
    /// derivatives on the physical eigenvalue domain (`|Q|^2 < 2/3`).
    TraceSq,
    /// `G = g(|Q|^2)` with `g(s) = s` below `s0` and a `C^2` saturating
    /// tail `s0 + cap * tanh((s - s0)/cap)` above, so `G <= s0 + cap`
    /// globally. With `s0` beyond the physical ball the cap never
    /// activates on admissible states and only guards excursions of the
    /// relaxed potential.
    Capped { s0: f64, cap: f64 },
}

impl GSpec {
    /// `(g, g')` as functions of `s = |Q|^2`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        match *self {
            GSpec::TraceSq => (s, 1.0),
            GSpec::Capped { s0, cap } => {
                if s <= s0 {
                    (s, 1.0)
                } else {
                    let t = (s - s0) / cap;
                    let th = t.tanh();
                    (s0 + cap * th, 1.0 - th * th)
                }
            }
        }
    }

    /// `G(Q)` and the (traceless) tensor derivative `dG/dQ = 2 g' Q`.
    pub fn eval_q(&self, q: &QTensor) -> (f64, QTensor) {
        let (g, g1) = self.eval(q.norm_sq());
        (g, *q * (2.0 * g1))
    }

    /// Upper bound for `|g'|` (equals 1 for both models).
    pub fn slope_bound(&self) -> f64 {
        1.0
    }
}

/// Model for a scalar transport coefficient as a function of temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoefSpec {
    /// Temperature-independent coefficient.
    Constant(f64),
    /// Smooth bounded interpolation `lo + (hi - lo) theta^2 / (s^2 +
    /// theta^2)`, increasing from `lo` at zero temperature toward `hi`.
    Rational { lo: f64, hi: f64, s: f64 },
}

impl CoefSpec {
    /// Coefficient value at temperature `theta`.
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            CoefSpec::Constant(c) => c,
            CoefSpec::Rational { lo, hi, s } => {
                let t2 = theta * theta;
                lo + (hi - lo) * t2 / (s * s + t2)
            }
        }
    }

    /// `(inf, sup)` of the coefficient over all admissible temperatures.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            CoefSpec::Constant(c) => (c, c),
            CoefSpec::Rational { lo, hi, .. } => (lo.min(hi), lo.max(hi)),
        }
    }
}

/// The complete set of material functions for a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoFunctions {
    /// Cooling strength model.
    pub u: USpec,
    /// Isotropic coupling model.
    pub g: GSpec,
    /// Viscosity `mu(theta)`.
    pub viscosity: CoefSpec,
    /// Rotational mobility `Gamma(theta)`.
    pub rotational: CoefSpec,
    /// Heat conductivity `kappa(theta)`.
    pub conductivity: CoefSpec,
    glue: Option<UGlue>,
}

/// Pointwise values of the temperature-dependent functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermoPoint {
    /// Truncated cooling strength `U_delta(theta)`.
    pub u: f64,
    /// First derivative `U_delta'(theta)`.
    pub u1: f64,
    /// Second derivative `U_delta''(theta)`.
    pub u2: f64,
    /// Viscosity `mu(theta)`.
    pub mu: f64,
    /// Rotational mobility `Gamma(theta)`.
    pub gamma: f64,
    /// Heat conductivity `kappa(theta)`.
    pub kappa: f64,
}

impl ThermoFunctions {
    /// Material functions with no truncation installed.
    pub fn new(
        u: USpec,
        g: GSpec,
        viscosity: CoefSpec,
        rotational: CoefSpec,
        conductivity: CoefSpec,
    ) -> Self {
        ThermoFunctions {
            u,
            g,
            viscosity,
            rotational,
            conductivity,
            glue: None,
        }
    }

    /// Temperature of the installed truncation (`None` when untruncated).
    pub fn cutoff(&self) -> Option<f64> {
        self.glue.map(|g| g.theta_c)
    }

    /// Describes the first violated structural assumption, if any:
    /// `U(0) > 0`, `U' <= 0`, `U'' >= 0`, positive coefficient lower
    /// bounds, and a nonnegative cap for `G`. Used by configuration
    /// validation.
    pub fn hypothesis_violation(&self) -> Option<String> {
        let (u0, _, _) = self.u.eval_raw(0.0);
        if u0 <= 0.0 {
            return Some(format!("cooling strength at zero temperature must be positive, got {u0}"));
        }
        match self.u {
            USpec::SqrtShifted { b, .. } if b < 0.0 => {
                return Some(format!("sqrt-shifted slope coefficient must be >= 0, got {b}"));
            }
            USpec::Linear { alpha, .. } if alpha < 0.0 => {
                return Some(format!("linear cooling rate must be >= 0, got {alpha}"));
            }
            _ => {}
        }
        for (name, c) in [
            ("viscosity", &self.viscosity),
            ("rotational mobility", &self.rotational),
            ("conductivity", &self.conductivity),
        ] {
            let (lo, hi) = c.bounds();
            if lo <= 0.0 || !hi.is_finite() {
                return Some(format!("{name} must have positive finite bounds, got [{lo}, {hi}]"));
            }
        }
        if let GSpec::Capped { s0, cap } = self.g {
            if s0 < 0.0 || cap <= 0.0 {
                return Some(format!("coupling cap requires s0 >= 0 and cap > 0, got s0={s0} cap={cap}"));
            }
        }
        None
    }

    /// Upper bound for `sup sqrt(theta) |U_delta'(theta)}` over
    /// `[theta_lo, theta_hi]`, the constant entering the temperature
    /// positivity rate. Analytic (`b/2`, valid with or without
    /// truncation) for the sqrt-shifted model; a padded grid supremum for
    /// the linear model.
    pub fn weighted_slope_bound(&self, theta_lo: f64, theta_hi: f64) -> f64 {
        match self.u {
            USpec::SqrtShifted { b, .. } => 0.5 * b,
            USpec::Linear { .. } => {
                let lo = theta_lo.max(0.0);
                let hi = theta_hi.max(lo);
                let mut sup: f64 = 0.0;
                let n = 1000;
                for i in 0..=n {
                    let th = lo + (hi - lo) * i as f64 / n as f64;
                    let pt = eval_thermo(th, self);
                    sup = sup.max(th.max(0.0).sqrt() * pt.u1.abs());
                }
                sup * 1.05
            }
        }
    }
}

impl Default for ThermoFunctions {
    /// The default model: `U = 2 - sqrt(1 + theta)`, `G = |Q|^2`, and
    /// unit constant transport coefficients.
    fn default() -> Self {
        ThermoFunctions::new(
            USpec::SqrtShifted { a: 2.0, b: 1.0 },
            GSpec::TraceSq,
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
        )
    }
}

/// Installs the high-temperature truncation at `theta_c = 1/delta` and
/// returns the truncated material functions; `delta = 0` returns the
/// functions unchanged (no truncation).
///
/// The tail decay scale is `k = -U'(theta_c)/U''(theta_c)`, which makes
/// the glue `C^2` for strictly convex models; for affine `U` (vanishing
/// curvature) the scale falls back to `max(theta_c, 1)` and the glue is
/// `C^1`. In both cases the truncated function stays decreasing, convex,
/// and bounded: `U_delta -> u_inf = U(theta_c) + k U'(theta_c)`.
pub fn truncate_u(thermo: &ThermoFunctions, delta: f64) -> ThermoFunctions {
    assert!(delta >= 0.0, "truncation parameter must be nonnegative");
    let mut out = thermo.clone();
    if delta == 0.0 {
        out.glue = None;
        return out;
    }
    let theta_c = 1.0 / delta;
    let (uc, u1c, u2c) = thermo.u.eval_raw(theta_c);
    let k = if u2c > 1e-300 * u1c.abs().max(1.0) {
        -u1c / u2c
    } else {
        theta_c.max(1.0)
    };
    let k = if k.is_finite() && k > 0.0 { k } else { theta_c.max(1.0) };
    let c = -k * u1c;
    out.glue = Some(UGlue {
        theta_c,
        k,
        c,
        u_inf: uc - c,
    });
    out
}

/// Evaluates all temperature-dependent material functions at `theta`.
///
/// Negative temperatures never occur along admissible trajectories (the
/// stepper enforces a positive floor); for robustness of audits the
/// cooling strength is extended below zero by its tangent at zero.
pub fn eval_thermo(theta: f64, thermo: &ThermoFunctions) -> ThermoPoint {
    let (u, u1, u2) = if theta < 0.0 {
        let (u0, u10, _) = thermo.u.eval_raw(0.0);
        (u0 + theta * u10, u10, 0.0)
    } else {
        match thermo.glue {
            Some(g) if theta > g.theta_c => {
                let e = g.c * (-(theta - g.theta_c) / g.k).exp();
                (g.u_inf + e, -e / g.k, e / (g.k * g.k))
            }
            _ => thermo.u.eval_raw(theta),
        }
    };
    ThermoPoint {
        u,
        u1,
        u2,
        mu: thermo.viscosity.eval(theta),
        gamma: thermo.rotational.eval(theta),
        kappa: thermo.conductivity.eval(theta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_derivs(theta: f64, thermo: &ThermoFunctions, h: f64) -> (f64, f64) {
        let up = eval_thermo(theta + h, thermo).u;
        let um = eval_thermo(theta - h, thermo).u;
        let u0 = eval_thermo(theta, thermo).u;
        ((up - um) / (2.0 * h), (up - 2.0 * u0 + um) / (h * h))
    }

    #[test]
    fn default_model_reference_values() {
        let t = ThermoFunctions::default();
        let p0 = eval_thermo(0.0, &t);
        assert!((p0.u - 1.0).abs() < 1e-15); // 2 - sqrt(1)
        assert!((p0.u1 + 0.5).abs() < 1e-15);
        assert!((p0.u2 - 0.25).abs() < 1e-15);
        let p3 = eval_thermo(3.0, &t);
        assert!(p3.u.abs() < 1e-15); // 2 - sqrt(4)
        assert!((p3.u1 + 0.25).abs() < 1e-15);
        assert_eq!(p3.mu, 1.0);
        assert_eq!(p3.gamma, 1.0);
        assert_eq!(p3.kappa, 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let t = truncate_u(&ThermoFunctions::default(), 0.01); // cutoff at 100
        for theta in [0.1, 1.0, 7.3, 99.0, 100.5, 140.0, 500.0] {
            let p = eval_thermo(theta, &t);
            let (fd1, fd2) = fd_derivs(theta, &t, 1e-4);
            assert!(
                (p.u1 - fd1).abs() <= 1e-6 * (1.0 + fd1.abs()),
                "u' at {theta}: {} vs {fd1}",
                p.u1
            );
            assert!(
                (p.u2 - fd2).abs() <= 1e-4 * (1.0 + fd2.abs()),
                "u'' at {theta}: {} vs {fd2}",
                p.u2
            );
        }
    }

    #[test]
    fn truncation_is_c2_for_strictly_convex_model() {
        let t = truncate_u(&ThermoFunctions::default(), 1e-2);
        let theta_c = 100.0;
        // Straddle tightly enough that the slope's own contribution
        // (2 eps |U'| ~ 1e-12) sits below the jump tolerances.
        let eps = 1e-11;
        let lo = eval_thermo(theta_c - eps, &t);
        let hi = eval_thermo(theta_c + eps, &t);
        assert!((lo.u - hi.u).abs() < 1e-10);
        assert!((lo.u1 - hi.u1).abs() < 1e-8);
        assert!((lo.u2 - hi.u2).abs() < 1e-5);
    }

    #[test]
    fn truncation_is_c1_for_affine_model() {
        let lin = ThermoFunctions::new(
            USpec::Linear {
                alpha: 0.5,
                theta_star: 4.0,
            },
            GSpec::TraceSq,
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
        );
        let t = truncate_u(&lin, 0.1); // cutoff at 10
        let eps = 1e-11; // keep 2 eps |U'| = 1e-11 under the jump tolerance
        let lo = eval_thermo(10.0 - eps, &t);
        let hi = eval_thermo(10.0 + eps, &t);
        assert!((lo.u - hi.u).abs() < 1e-10);
        assert!((lo.u1 - hi.u1).abs() < 1e-8);
        // Curvature jumps from 0 to c/k^2 > 0: still convex on both sides.
        assert!(lo.u2 == 0.0 && hi.u2 > 0.0);
    }

    #[test]
    fn truncated_model_is_bounded_monotone_convex() {
        let t = truncate_u(&ThermoFunctions::default(), 1e-3);
        let mut prev_u = f64::INFINITY;
        for i in 0..2000 {
            let theta = 1e-3 * (1.02_f64).powi(i); // log grid up to ~4e5
            let p = eval_thermo(theta, &t);
            assert!(p.u.is_finite());
            assert!(p.u <= prev_u + 1e-12, "monotone at {theta}");
            assert!(p.u1 <= 0.0, "decreasing at {theta}");
            assert!(p.u2 >= 0.0, "convex at {theta}");
            prev_u = p.u;
        }
        // The tail limit is finite and U' decays to zero.
        let far = eval_thermo(1e9, &t);
        assert!(far.u.is_finite());
        assert!(far.u1.abs() < 1e-12);
        // Raw model would be at -sqrt(1e9) ~ -3e4 here.
        assert!(far.u > -100.0);
    }

    #[test]
    fn zero_delta_means_no_truncation() {
        let raw = ThermoFunctions::default();
        let t = truncate_u(&raw, 0.0);
        assert_eq!(t.cutoff(), None);
        for theta in [0.5, 10.0, 1e4] {
            let a = eval_thermo(theta, &raw);
            let b = eval_thermo(theta, &t);
            assert_eq!(a.u, b.u);
            assert_eq!(a.u1, b.u1);
        }
    }

    #[test]
    fn negative_temperature_extension_is_tangent_at_zero() {
        let t = ThermoFunctions::default();
        let p = eval_thermo(-0.3, &t);
        assert!((p.u - (1.0 + 0.3 * 0.5)).abs() < 1e-15);
        assert_eq!(p.u2, 0.0);
    }

    #[test]
    fn weighted_slope_bound_default_model() {
        let t = truncate_u(&ThermoFunctions::default(), 1e-3);
        let bound = t.weighted_slope_bound(0.01, 1e4);
        assert!((bound - 0.5).abs() < 1e-15);
        // The bound really dominates sqrt(theta) |U'| on a grid.
        for i in 0..1000 {
            let theta = 1e-2 * 1.02_f64.powi(i);
            let p = eval_thermo(theta, &t);
            assert!(theta.sqrt() * p.u1.abs() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn coupling_models() {
        let g = GSpec::TraceSq;
        assert_eq!(g.eval(0.37), (0.37, 1.0));
        let q = QTensor::new(0.1, -0.2, 0.05, 0.0, 0.03);
        let (val, dq) = g.eval_q(&q);
        assert!((val - q.norm_sq()).abs() < 1e-15);
        assert!((dq - q * 2.0).norm() < 1e-15);

        let c = GSpec::Capped { s0: 2.0, cap: 1.0 };
        // Identical below the activation threshold.
        assert_eq!(c.eval(0.66), (0.66, 1.0));
        // Smooth at the threshold (straddle small enough that the unit
        // slope contributes only 2e-13 to the difference).
        let (lo, lo1) = c.eval(2.0 - 1e-13);
        let (hi, hi1) = c.eval(2.0 + 1e-13);
        assert!((lo - hi).abs() < 1e-12 && (lo1 - hi1).abs() < 1e-6);
        // Bounded by s0 + cap, slope in (0, 1]. Probe where the cap is
        // nearly saturated but the gap still resolves in double precision
        // (tanh rounds to exactly 1 beyond t ~ 19).
        let (far, far1) = c.eval(10.0);
        assert!(far < 3.0 && far > 2.99);
        assert!(far1 > 0.0 && far1 < 1e-6);
        let (sat, sat1) = c.eval(50.0);
        assert!(sat <= 3.0 && sat1 >= 0.0);
        // Never active on the physical ball |Q|^2 <= 2/3.
        assert_eq!(c.eval(2.0 / 3.0), (2.0 / 3.0, 1.0));
    }

    #[test]
    fn coefficient_models() {
        let c = CoefSpec::Constant(2.5);
        assert_eq!(c.eval(7.0), 2.5);
        assert_eq!(c.bounds(), (2.5, 2.5));
        let r = CoefSpec::Rational {
            lo: 0.5,
            hi: 2.0,
            s: 1.0,
        };
        assert_eq!(r.eval(0.0), 0.5);
        assert!((r.eval(1.0) - 1.25).abs() < 1e-15);
        let (lo, hi) = r.bounds();
        assert_eq!((lo, hi), (0.5, 2.0));
        let mut prev = 0.0;
        for i in 0..100 {
            let v = r.eval(0.1 * i as f64);
            assert!(v >= prev && v < 2.0);
            prev = v;
        }
    }

    #[test]
    fn hypothesis_checks_catch_bad_models() {
        let ok = ThermoFunctions::default();
        assert!(ok.hypothesis_violation().is_none());
        let bad_u0 = ThermoFunctions::new(
            USpec::SqrtShifted { a: 0.5, b: 1.0 }, // U(0) = -0.5
            GSpec::TraceSq,
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
        );
        assert!(bad_u0.hypothesis_violation().is_some());
        let bad_coef = ThermoFunctions::new(
            USpec::SqrtShifted { a: 2.0, b: 1.0 },
            GSpec::TraceSq,
            CoefSpec::Constant(0.0),
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
        );
        assert!(bad_coef.hypothesis_violation().is_some());
    }

    #[test]
    fn constant_cooling_is_admissible() {
        // b = 0 freezes the thermal coupling; used by the relaxation
        // tests where the free energy must decay along trajectories.
        let t = ThermoFunctions::new(
            USpec::SqrtShifted { a: 2.0, b: 0.0 },
            GSpec::TraceSq,
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
            CoefSpec::Constant(1.0),
        );
        assert!(t.hypothesis_violation().is_none());
        for theta in [0.1, 1.0, 100.0] {
            let p = eval_thermo(theta, &t);
            assert_eq!(p.u, 2.0);
            assert_eq!(p.u1, 0.0);
        }
        assert_eq!(t.weighted_slope_bound(0.0, 1e6), 0.0);
    }
}
