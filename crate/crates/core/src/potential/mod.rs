//! The singular maximum-entropy bulk potential and its Moreau envelope.
//!
//! The potential assigns to an order tensor `Q` the minimal relative
//! entropy of an orientational probability density `rho` on the unit
//! sphere whose normalized second moment matches `Q`:
//!
//! ```text
//! f(Q) = min { integral rho log rho : rho >= 0,
//!              integral rho = 1,
//!              integral (p x p - I/3) rho(p) dp = Q }
//! ```
//!
//! `f` is finite exactly when every eigenvalue of `Q` lies in
//! `(-1/3, 2/3)` — the physical constraint that eigenvalues of a second
//! moment of a probability measure obey — and blows up logarithmically at
//! the boundary, which is what keeps trajectories inside the physical
//! regime. The minimum value is `-log(4 pi)`, attained at `Q = 0` by the
//! uniform density.
//!
//! Evaluation goes through convex duality: in the eigenframe of `Q` the
//! optimal density is `rho = exp(sum_j mu_j p_j^2) / Z(mu)` and the dual
//! exponents solve the moment-matching conditions
//! `<p_i^2>_mu = lambda_i + 1/3`. That smooth 3x3 system (2x2 after the
//! gauge `sum_i mu_i = 0`) is solved by a damped Newton iteration whose
//! Jacobian is the covariance matrix of `(p_1^2, p_2^2, p_3^2)` —
//! symmetric positive semidefinite with exact null vector `(1,1,1)` — so
//! a rank-one shift makes each step a small Cholesky solve.
//!
//! The time stepper mostly uses the Moreau envelope
//!
//! ```text
//! f_m(Q) = min_Y [ f(Y) + (m/2) |Q - Y|^2 ],
//! ```
//!
//! a convex `C^1` approximation defined for *all* symmetric traceless
//! tensors, increasing to `f` as `m -> infinity`, with an `m`-Lipschitz
//! gradient `m (Q - prox(Q))`. The envelope is evaluated by a single
//! Newton solve as well: the stationarity condition collapses the nested
//! minimization to `mu/m + pi(mu) = lambda`, where `pi(mu)` is the
//! centered moment vector of the exponential density.

pub mod quadrature;
pub mod thermo;

pub use quadrature::SphereQuadrature;
pub use thermo::{eval_thermo, truncate_u, CoefSpec, GSpec, ThermoFunctions, ThermoPoint, USpec};

use crate::error::{CoreError, Result};
use crate::tensor::{eigen_q, QTensor};
use nalgebra::{Matrix3, Vector3};

/// Convergence threshold for the sup-norm of the Newton residual (in
/// eigenvalue units).
pub const NEWTON_TOL: f64 = 1e-12;

/// Iteration cap for the Newton solves.
pub const NEWTON_MAX_ITERS: u32 = 50;

/// Safety margin to the eigenvalue domain boundary `(-1/3, 2/3)`:
/// evaluation of the exact potential is refused closer than this.
pub const DOMAIN_MARGIN: f64 = 1e-8;

/// Residual level still accepted (flagged as unconverged) when the
/// iteration cap is reached; worse residuals are hard errors.
const SOFT_TOL: f64 = 1e-6;

/// Result of a potential evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PotentialEval {
    /// Potential value `f(Q)` (or `f_m(Q)` for the envelope).
    pub value: f64,
    /// Tensor gradient; traceless by the mean-zero gauge of the dual
    /// exponents. For the envelope this equals `m (Q - prox(Q))`.
    pub gradient: QTensor,
    /// Eigenvalues of the gradient, ordered like the descending
    /// eigenvalues of the input; these are the dual exponents of the
    /// optimal density in the mean-zero gauge.
    pub dual_exponents: [f64; 3],
    /// Newton iterations spent.
    pub newton_iters: u32,
    /// Whether the residual reached [`NEWTON_TOL`]. Evaluations that stall
    /// between [`NEWTON_TOL`] and the soft acceptance level are returned
    /// with `converged = false` rather than as errors, so tabulation near
    /// the domain boundary can still report values.
    pub converged: bool,
}

/// Log-partition value and moments of the density
/// `exp(sum_j mu_j p_j^2)` over the sphere.
struct SphereMoments {
    /// `log Z(mu)`.
    log_z: f64,
    /// `<p_i^2>`; nonnegative, summing to 1.
    mean: [f64; 3],
    /// Covariance matrix of `(p_1^2, p_2^2, p_3^2)`; PSD with null
    /// vector `(1,1,1)`.
    cov: Matrix3<f64>,
}

/// Computes the sphere moments by quadrature, rescaled by the maximal
/// exponent so arbitrarily large dual exponents stay in range.
fn sphere_moments(mu: &[f64; 3], quad: &SphereQuadrature) -> SphereMoments {
    // On the sphere p3^2 = 1 - p1^2 - p2^2, so the exponent reduces to
    // mu3 + d1 p1^2 + d2 p2^2: one exp per node.
    let d1 = mu[0] - mu[2];
    let d2 = mu[1] - mu[2];
    let n = quad.len();
    let mut emax = f64::NEG_INFINITY;
    for k in 0..n {
        let e = d1 * quad.p1sq[k] + d2 * quad.p2sq[k];
        if e > emax {
            emax = e;
        }
    }
    let (mut s0, mut s1, mut s2) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut s11, mut s22, mut s12) = (0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..n {
        let a = quad.p1sq[k];
        let b = quad.p2sq[k];
        let ex = quad.w[k] * (d1 * a + d2 * b - emax).exp();
        s0 += ex;
        s1 += ex * a;
        s2 += ex * b;
        s11 += ex * a * a;
        s22 += ex * b * b;
        s12 += ex * a * b;
    }
    let m1 = s1 / s0;
    let m2 = s2 / s0;
    let m3 = 1.0 - m1 - m2;
    // Second moments of the squares; the ones involving p3^2 follow from
    // the constraint p1^2 + p2^2 + p3^2 = 1 without extra sums.
    let p11 = s11 / s0;
    let p22 = s22 / s0;
    let p12 = s12 / s0;
    let p13 = m1 - p11 - p12;
    let p23 = m2 - p12 - p22;
    let p33 = m3 - p13 - p23;
    let cov = Matrix3::new(
        p11 - m1 * m1,
        p12 - m1 * m2,
        p13 - m1 * m3,
        p12 - m1 * m2,
        p22 - m2 * m2,
        p23 - m2 * m3,
        p13 - m1 * m3,
        p23 - m2 * m3,
        p33 - m3 * m3,
    );
    SphereMoments {
        log_z: mu[2] + emax + s0.ln(),
        mean: [m1, m2, m3],
        cov,
    }
}

/// Shifts `mu` into the mean-zero gauge.
fn project_gauge(mu: &mut [f64; 3]) {
    let mean = (mu[0] + mu[1] + mu[2]) / 3.0;
    mu[0] -= mean;
    mu[1] -= mean;
    mu[2] -= mean;
}

/// Newton step `d = -J^{-1} r` on the mean-zero subspace. `J` is PSD with
/// (near-)null vector `(1,1,1)` and `r` is mean-free, so the rank-one
/// shift `J + c 1 1^t` is definite and leaves the step on the subspace
/// unchanged; the result is re-centered to scrub rounding.
fn newton_direction(j: &Matrix3<f64>, r: &Vector3<f64>) -> Option<Vector3<f64>> {
    let c = (j.trace() / 3.0).max(1e-14);
    let shifted = j + Matrix3::from_element(c);
    let mut d = shifted.cholesky()?.solve(&(-r));
    let mean = (d[0] + d[1] + d[2]) / 3.0;
    d[0] -= mean;
    d[1] -= mean;
    d[2] -= mean;
    Some(d)
}

/// Shared damped-Newton driver. `residual` maps the current moments and
/// exponents to the root function; `jacobian` augments the moment
/// covariance (identity over `m` for the envelope, nothing for the exact
/// potential). Returns the final exponents, moments, residual sup-norm,
/// and iteration count.
fn newton_solve(
    quad: &SphereQuadrature,
    mut mu: [f64; 3],
    residual: impl Fn(&[f64; 3], &SphereMoments) -> Vector3<f64>,
    jacobian: impl Fn(&Matrix3<f64>) -> Matrix3<f64>,
    what: &'static str,
) -> Result<([f64; 3], SphereMoments, f64, u32)> {
    project_gauge(&mut mu);
    let mut mom = sphere_moments(&mu, quad);
    let mut res = residual(&mu, &mom);
    let mut res_norm = res.amax();
    let mut iters = 0u32;
    while iters < NEWTON_MAX_ITERS && res_norm > NEWTON_TOL {
        iters += 1;
        let Some(dir) = newton_direction(&jacobian(&mom.cov), &res) else {
            return Err(CoreError::NoConvergence {
                what,
                iters,
                residual: res_norm,
            });
        };
        // Backtracking on the residual sup-norm; full steps are accepted
        // in the quadratic regime, halving handles the stiff approach to
        // strongly anisotropic densities.
        let mut alpha = 1.0_f64;
        let mut accepted = false;
        while alpha >= 1.0 / 4096.0 {
            let trial = [
                mu[0] + alpha * dir[0],
                mu[1] + alpha * dir[1],
                mu[2] + alpha * dir[2],
            ];
            let tmom = sphere_moments(&trial, quad);
            let tres = residual(&trial, &tmom);
            if tres.amax() <= (1.0 - 0.25 * alpha) * res_norm {
                mu = trial;
                mom = tmom;
                res = tres;
                res_norm = res.amax();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break; // line search exhausted; fall through to acceptance check
        }
    }
    if res_norm > SOFT_TOL {
        return Err(CoreError::NoConvergence {
            what,
            iters,
            residual: res_norm,
        });
    }
    Ok((mu, mom, res_norm, iters))
}

/// Evaluates the singular potential `f(Q)`, its gradient, and the dual
/// exponents of the optimal density.
///
/// Fails with [`CoreError::DomainViolation`] when an eigenvalue of `q` is
/// closer than [`DOMAIN_MARGIN`] to the boundary of `(-1/3, 2/3)`, and
/// with [`CoreError::NoConvergence`] if the moment system stalls (which
/// happens only when the requested moments exceed what the discrete node
/// set can represent; see
/// [`SphereQuadrature::max_second_moment`]).
pub fn eval_f(q: &QTensor, quad: &SphereQuadrature) -> Result<PotentialEval> {
    let (lambda, frame) = eigen_q(q);
    if lambda[2] <= -1.0 / 3.0 + DOMAIN_MARGIN || lambda[0] >= 2.0 / 3.0 - DOMAIN_MARGIN {
        return Err(CoreError::DomainViolation {
            lambda_min: lambda[2],
            lambda_max: lambda[0],
            margin: DOMAIN_MARGIN,
        });
    }
    let target = [
        lambda[0] + 1.0 / 3.0,
        lambda[1] + 1.0 / 3.0,
        lambda[2] + 1.0 / 3.0,
    ];
    // Warm start from the small-order expansion f'(Q) ~ (15/2) Q.
    let mu0 = [7.5 * lambda[0], 7.5 * lambda[1], 7.5 * lambda[2]];
    let (mu, mom, res_norm, iters) = newton_solve(
        quad,
        mu0,
        |_, mom| {
            Vector3::new(
                mom.mean[0] - target[0],
                mom.mean[1] - target[1],
                mom.mean[2] - target[2],
            )
        },
        |cov| *cov,
        "bulk potential dual solve",
    )?;
    // Legendre duality: f = mu . (lambda + 1/3) - log Z, gauge-invariant.
    let value =
        mu[0] * target[0] + mu[1] * target[1] + mu[2] * target[2] - mom.log_z;
    Ok(PotentialEval {
        value,
        gradient: QTensor::from_eigen(&mu, &frame),
        dual_exponents: mu,
        newton_iters: iters,
        converged: res_norm <= NEWTON_TOL,
    })
}

/// Evaluates the Moreau envelope `f_m(Q)` with parameter `m > 0`, its
/// gradient `m (Q - prox(Q))`, and the dual exponents of the proximal
/// density.
///
/// Defined (and smooth) for every symmetric traceless `q`, including
/// tensors far outside the eigenvalue domain of the exact potential; the
/// proximal point always has admissible eigenvalues, so no domain check
/// is needed or performed.
pub fn eval_f_moreau(q: &QTensor, m: f64, quad: &SphereQuadrature) -> Result<PotentialEval> {
    assert!(m.is_finite() && m > 0.0, "envelope parameter must be positive");
    let (lambda, frame) = eigen_q(q);
    // Warm start from the linearization mu = m (lambda - mu / (15/2)).
    let w = 15.0 * m / (15.0 + 2.0 * m);
    let mu0 = [w * lambda[0], w * lambda[1], w * lambda[2]];
    let (mu, mom, res_norm, iters) = newton_solve(
        quad,
        mu0,
        |mu, mom| {
            Vector3::new(
                mu[0] / m + mom.mean[0] - 1.0 / 3.0 - lambda[0],
                mu[1] / m + mom.mean[1] - 1.0 / 3.0 - lambda[1],
                mu[2] / m + mom.mean[2] - 1.0 / 3.0 - lambda[2],
            )
        },
        |cov| cov + Matrix3::identity() / m,
        "envelope dual solve",
    )?;
    // Envelope value: f at the proximal eigenvalues pi = <p^2> - 1/3 plus
    // the quadratic penalty, which equals |mu|^2 / (2m) because the
    // gradient identity mu = m (lambda - pi) holds at the solution.
    let f_prox = mu[0] * mom.mean[0] + mu[1] * mom.mean[1] + mu[2] * mom.mean[2] - mom.log_z;
    let penalty = (mu[0] * mu[0] + mu[1] * mu[1] + mu[2] * mu[2]) / (2.0 * m);
    Ok(PotentialEval {
        value: f_prox + penalty,
        gradient: QTensor::from_eigen(&mu, &frame),
        dual_exponents: mu,
        newton_iters: iters,
        converged: res_norm <= NEWTON_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::eigenvalues_q;
    use nalgebra::{Rotation3, Unit};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn quad() -> SphereQuadrature {
        SphereQuadrature::product_default()
    }

    /// Random symmetric traceless tensor with eigenvalues safely inside
    /// the domain (rescaled into `lambda_max <= 0.55`,
    /// `lambda_min >= -0.30`).
    fn random_interior_q(rng: &mut ChaCha8Rng) -> QTensor {
        let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let q = QTensor::project_sym(&(0.5 * (a + a.transpose())));
        let l = eigenvalues_q(&q);
        let mut scale = 1.0_f64;
        if l[0] > 0.0 {
            scale = scale.min(0.55 / l[0]);
        }
        if l[2] < 0.0 {
            scale = scale.min(-0.30 / l[2]);
        }
        q * scale
    }

    fn diag_q(l1: f64, l2: f64) -> QTensor {
        QTensor::new(l1, l2, 0.0, 0.0, 0.0)
    }

    /// Uniaxial tensor along the z axis with leading eigenvalue `s`.
    fn uniaxial_z(s: f64) -> QTensor {
        QTensor::uniaxial(s, &Vector3::new(0.0, 0.0, 1.0))
    }

    #[test]
    fn isotropic_value_is_minus_log_sphere_area() {
        let quad = quad();
        let e = eval_f(&QTensor::ZERO, &quad).unwrap();
        let oracle = -(4.0 * PI).ln();
        assert!((e.value - oracle).abs() < 1e-10, "{} vs {oracle}", e.value);
        assert!(e.gradient.norm() < 1e-10);
        assert!(e.dual_exponents.iter().all(|m| m.abs() < 1e-10));
        assert!(e.converged);
        assert!(e.newton_iters <= 2);
    }

    #[test]
    fn value_never_below_isotropic_minimum() {
        let quad = quad();
        let floor = -(4.0 * PI).ln();
        let mut r = rng(20);
        for _ in 0..100 {
            let q = random_interior_q(&mut r);
            let e = eval_f(&q, &quad).unwrap();
            assert!(e.value >= floor - 1e-12, "f = {} below floor", e.value);
        }
    }

    #[test]
    fn small_q_expansion_has_curvature_fifteen_fourths() {
        // f(Q) = f(0) + (15/4) |Q|^2 + O(|Q|^3); averaging +-t kills the
        // cubic term, so the quadratic coefficient is read off to O(t^2).
        let quad = quad();
        let f0 = -(4.0 * PI).ln();
        let mut r = rng(21);
        for _ in 0..5 {
            let d = random_interior_q(&mut r);
            let d = d * (1.0 / d.norm());
            let t = 1e-3;
            let fp = eval_f(&(d * t), &quad).unwrap().value;
            let fm = eval_f(&(d * -t), &quad).unwrap().value;
            let coeff = (0.5 * (fp + fm) - f0) / (t * t);
            assert!(
                (coeff - 3.75).abs() < 1e-4 * 3.75,
                "quadratic coefficient {coeff}"
            );
            // Gradient slope agrees: grad f(tD) ~ (15/2) t D.
            let g = eval_f(&(d * t), &quad).unwrap().gradient;
            let lin = d * (7.5 * t);
            assert!((g - lin).norm() <= 5e-3 * lin.norm());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let quad = quad();
        let mut r = rng(22);
        let h = 1e-6;
        for _ in 0..30 {
            let q = random_interior_q(&mut r) * 0.8;
            let e = eval_f(&q, &quad).unwrap();
            let g = e.gradient;
            // Derivatives with respect to the five stored components; the
            // dependent entry q33 = -(q11 + q22) moves along, and the
            // off-diagonal components appear twice in the matrix.
            let fd = |dq11: f64, dq22: f64, dq12: f64, dq13: f64, dq23: f64| {
                let dq = QTensor::new(dq11, dq22, dq12, dq13, dq23);
                let fp = eval_f(&(q + dq * h), &quad).unwrap().value;
                let fm = eval_f(&(q - dq * h), &quad).unwrap().value;
                (fp - fm) / (2.0 * h)
            };
            let checks = [
                (fd(1.0, 0.0, 0.0, 0.0, 0.0), 2.0 * g.q11 + g.q22),
                (fd(0.0, 1.0, 0.0, 0.0, 0.0), g.q11 + 2.0 * g.q22),
                (fd(0.0, 0.0, 1.0, 0.0, 0.0), 2.0 * g.q12),
                (fd(0.0, 0.0, 0.0, 1.0, 0.0), 2.0 * g.q13),
                (fd(0.0, 0.0, 0.0, 0.0, 1.0), 2.0 * g.q23),
            ];
            for (i, (num, ana)) in checks.iter().enumerate() {
                assert!(
                    (num - ana).abs() <= 1e-5 * (1.0 + num.abs()),
                    "component {i}: fd {num} vs gradient {ana}"
                );
            }
        }
    }

    #[test]
    fn midpoint_convexity() {
        let quad = quad();
        let mut r = rng(23);
        for _ in 0..500 {
            let a = random_interior_q(&mut r);
            let b = random_interior_q(&mut r);
            let fa = eval_f(&a, &quad).unwrap().value;
            let fb = eval_f(&b, &quad).unwrap().value;
            let fm = eval_f(&((a + b) * 0.5), &quad).unwrap().value;
            assert!(
                fm <= 0.5 * (fa + fb) + 1e-11,
                "midpoint {fm} above average {}",
                0.5 * (fa + fb)
            );
        }
    }

    #[test]
    fn rotational_covariance() {
        let quad = quad();
        let mut r = rng(24);
        let mut done = 0;
        while done < 20 {
            let q = random_interior_q(&mut r);
            let l = eigenvalues_q(&q);
            // Keep the spectrum well separated so eigenframes are stable
            // and gradients comparable to rounding accuracy.
            if l[0] - l[1] < 0.05 || l[1] - l[2] < 0.05 {
                continue;
            }
            done += 1;
            let axis = Vector3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            let rot = Rotation3::from_axis_angle(
                &Unit::new_normalize(axis),
                r.random_range(0.0..std::f64::consts::TAU),
            );
            let rm = *rot.matrix();
            let qr = QTensor::project_sym(&(rm * q.to_matrix() * rm.transpose()));
            let e = eval_f(&q, &quad).unwrap();
            let er = eval_f(&qr, &quad).unwrap();
            assert!((e.value - er.value).abs() <= 1e-9 * (1.0 + e.value.abs()));
            let rotated = QTensor::project_sym(&(rm * e.gradient.to_matrix() * rm.transpose()));
            assert!(
                (rotated - er.gradient).norm() <= 1e-9 * (1.0 + rotated.norm()),
                "gradient covariance defect {}",
                (rotated - er.gradient).norm()
            );
        }
    }

    /// Optimality certificate for the discrete primal problem: the density
    /// reconstructed from the dual exponents is feasible (re-summed
    /// moments match), its directly re-summed entropy equals the reported
    /// dual value, and random feasible perturbations cannot decrease it.
    /// With convexity of the discrete entropy this certifies a global
    /// minimum, independently of the Newton path that produced the
    /// exponents.
    #[test]
    fn dual_solution_certifies_discrete_primal_optimum() {
        let quad = quad();
        let points = [
            (0.2, 0.05),
            (0.4, -0.1),
            (0.6, -0.28),
            (0.1, 0.1),
            (-0.05, -0.25),
        ];
        for (pt, &(l1, l2)) in points.iter().enumerate() {
            let q = diag_q(l1, l2);
            let e = eval_f(&q, &quad).unwrap();
            let mu = e.dual_exponents;
            let n = quad.len();
            // Reconstruct the discrete density.
            let mut rho = vec![0.0_f64; n];
            let mut z = 0.0;
            for k in 0..n {
                let p = &quad.dir[k];
                let val = (mu[0] * p[0] * p[0] + mu[1] * p[1] * p[1] + mu[2] * p[2] * p[2]).exp();
                rho[k] = val;
                z += quad.w[k] * val;
            }
            for v in &mut rho {
                *v /= z;
            }
            // Feasibility by direct re-summation.
            let mut mass = 0.0;
            let mut mom = [0.0_f64; 3];
            for k in 0..n {
                mass += quad.w[k] * rho[k];
                for i in 0..3 {
                    mom[i] += quad.w[k] * rho[k] * quad.dir[k][i] * quad.dir[k][i];
                }
            }
            assert!((mass - 1.0).abs() < 1e-12);
            let lam = eigenvalues_q(&q);
            for i in 0..3 {
                assert!(
                    (mom[i] - (lam[i] + 1.0 / 3.0)).abs() < 1e-11,
                    "moment {i}: {} vs {}",
                    mom[i],
                    lam[i] + 1.0 / 3.0
                );
            }
            // Primal value by direct entropy summation.
            let mut primal = 0.0;
            for k in 0..n {
                primal += quad.w[k] * rho[k] * rho[k].ln();
            }
            assert!(
                (primal - e.value).abs() < 1e-10 * (1.0 + e.value.abs()),
                "primal {primal} vs dual {}",
                e.value
            );
            // Random feasible perturbations must not undercut the
            // reported optimum: the exponential-form density is the exact
            // entropy minimizer over its own moment slice.
            let probed = feasible_probe_min(&quad, &rho, 91 + pt as u64);
            assert!(
                probed >= primal - 1e-9,
                "feasible probe found {probed} below {primal}"
            );
        }
    }

    /// Probes the discrete entropy at random positive densities sharing
    /// the mass and diagonal second moments of `rho0`: directions are
    /// projected onto the null space of the constraint rows and scaled to
    /// keep the density positive. Returns the smallest value seen.
    fn feasible_probe_min(quad: &SphereQuadrature, rho0: &[f64], seed: u64) -> f64 {
        let n = quad.len();
        // Independent constraint rows: total mass plus two diagonal
        // moments (the third moment row is their linear combination).
        let rows: Vec<Vec<f64>> = vec![
            quad.w.clone(),
            (0..n).map(|k| quad.w[k] * quad.dir[k][0] * quad.dir[k][0]).collect(),
            (0..n).map(|k| quad.w[k] * quad.dir[k][1] * quad.dir[k][1]).collect(),
        ];
        let mut gram: Matrix3<f64> = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                gram[(i, j)] = rows[i].iter().zip(&rows[j]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        let gram_inv = gram.try_inverse().unwrap();
        let entropy = |rho: &[f64]| -> f64 {
            rho.iter().zip(&quad.w).map(|(r, w)| w * r * r.ln()).sum()
        };
        let mut r = rng(seed);
        let mut best = entropy(rho0);
        for _ in 0..200 {
            let mut d: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut defect: Vector3<f64> = Vector3::zeros();
            for i in 0..3 {
                defect[i] = rows[i].iter().zip(&d).map(|(a, v)| a * v).sum::<f64>();
            }
            let coef = gram_inv * defect;
            for k in 0..n {
                d[k] -= coef[0] * rows[0][k] + coef[1] * rows[1][k] + coef[2] * rows[2][k];
            }
            // Largest step keeping every weight above a tenth of its
            // current value, so the entropy stays finite.
            let mut t_max = f64::INFINITY;
            for k in 0..n {
                if d[k] < 0.0 {
                    t_max = t_max.min(-0.9 * rho0[k] / d[k]);
                }
            }
            if !t_max.is_finite() {
                t_max = 1.0;
            }
            for frac in [1.0, 0.3, 0.03, 1e-3] {
                let cand: Vec<f64> =
                    (0..n).map(|k| rho0[k] + t_max * frac * d[k]).collect();
                best = best.min(entropy(&cand));
            }
        }
        best
    }

    #[test]
    fn uniaxial_ray_blows_up_toward_the_boundary() {
        let quad = quad();
        let f0 = -(4.0 * PI).ln();
        let mut prev = f0;
        for s in [0.3, 0.6, 0.65, 0.66] {
            let e = eval_f(&uniaxial_z(s), &quad).unwrap();
            assert!(e.converged, "not converged at s = {s}");
            assert!(e.value > prev, "f({s}) = {} not above {prev}", e.value);
            prev = e.value;
        }
        let f06 = eval_f(&uniaxial_z(0.6), &quad).unwrap();
        let f066 = eval_f(&uniaxial_z(0.66), &quad).unwrap();
        assert!(f066.value - f06.value >= 1.0, "growth too weak for a log divergence");
        // The leading dual exponent stiffens as the density concentrates.
        assert!(f066.dual_exponents[0] > f06.dual_exponents[0]);
        // Oblate side: lambda_min toward -1/3 diverges as well.
        let o1 = eval_f(&uniaxial_z(-0.3), &quad).unwrap();
        let o2 = eval_f(&uniaxial_z(-0.33), &quad).unwrap();
        assert!(o1.value > f0 && o2.value > o1.value);
    }

    #[test]
    fn domain_violations_are_rejected() {
        let quad = quad();
        for s in [0.67, 2.0 / 3.0 - 1e-9] {
            match eval_f(&uniaxial_z(s), &quad) {
                Err(CoreError::DomainViolation { lambda_max, .. }) => {
                    assert!(lambda_max > 2.0 / 3.0 - 2.0 * DOMAIN_MARGIN);
                }
                other => panic!("expected domain violation at s = {s}, got {other:?}"),
            }
        }
        match eval_f(&uniaxial_z(-1.0 / 3.0), &quad) {
            Err(CoreError::DomainViolation { lambda_min, .. }) => {
                assert!(lambda_min <= -1.0 / 3.0 + DOMAIN_MARGIN);
            }
            other => panic!("expected domain violation, got {other:?}"),
        }
    }

    #[test]
    fn eigenvalue_permutations_relabel_the_solution() {
        let quad = quad();
        let (l1, l2, l3) = (0.4, -0.1, -0.3);
        let perms = [(l1, l2), (l2, l3), (l3, l1), (l2, l1), (l1, l3)];
        let reference = eval_f(&diag_q(l1, l2), &quad).unwrap();
        for &(a, b) in &perms {
            let e = eval_f(&diag_q(a, b), &quad).unwrap();
            assert!((e.value - reference.value).abs() < 1e-10);
            // Sorted dual exponents agree.
            let mut mu = e.dual_exponents;
            let mut mu_ref = reference.dual_exponents;
            mu.sort_by(|x, y| y.partial_cmp(x).unwrap());
            mu_ref.sort_by(|x, y| y.partial_cmp(x).unwrap());
            for i in 0..3 {
                assert!((mu[i] - mu_ref[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tied_eigenvalues_give_commuting_gradient() {
        let quad = quad();
        for q in [uniaxial_z(0.5), uniaxial_z(-0.25), diag_q(0.15, 0.15)] {
            let e = eval_f(&q, &quad).unwrap();
            let qm = q.to_matrix();
            let gm = e.gradient.to_matrix();
            let comm = qm * gm - gm * qm;
            assert!(comm.abs().max() < 1e-9, "commutator {}", comm.abs().max());
            // The tied pair of dual exponents stays tied.
            let mut mu = e.dual_exponents;
            mu.sort_by(|x, y| y.partial_cmp(x).unwrap());
            let gap_min = (mu[0] - mu[1]).abs().min((mu[1] - mu[2]).abs());
            assert!(gap_min < 1e-9, "exponents {mu:?} not tied");
        }
    }

    #[test]
    fn envelope_at_zero_matches_exact_minimum() {
        let quad = quad();
        let f0 = -(4.0 * PI).ln();
        for m in [1.0, 100.0] {
            let e = eval_f_moreau(&QTensor::ZERO, m, &quad).unwrap();
            assert!((e.value - f0).abs() < 1e-10);
            assert!(e.gradient.norm() < 1e-10);
        }
    }

    #[test]
    fn envelope_below_exact_and_within_gradient_gap() {
        // For convex f: 0 <= f(Q) - f_m(Q) <= |grad f(Q)|^2 / (2m).
        let quad = quad();
        let mut r = rng(25);
        for _ in 0..30 {
            let q = random_interior_q(&mut r);
            let exact = eval_f(&q, &quad).unwrap();
            for m in [10.0, 100.0, 1e6] {
                let env = eval_f_moreau(&q, m, &quad).unwrap();
                let gap = exact.value - env.value;
                let bound = exact.gradient.norm_sq() / (2.0 * m);
                assert!(gap >= -1e-10, "envelope above exact by {}", -gap);
                assert!(gap <= bound + 1e-9, "gap {gap} exceeds bound {bound}");
            }
        }
    }

    #[test]
    fn envelope_is_monotone_in_the_parameter() {
        let quad = quad();
        let mut r = rng(26);
        for _ in 0..30 {
            let q = random_interior_q(&mut r);
            let f10 = eval_f_moreau(&q, 10.0, &quad).unwrap().value;
            let f100 = eval_f_moreau(&q, 100.0, &quad).unwrap().value;
            let f1000 = eval_f_moreau(&q, 1000.0, &quad).unwrap().value;
            let exact = eval_f(&q, &quad).unwrap().value;
            assert!(f10 <= f100 + 1e-11);
            assert!(f100 <= f1000 + 1e-11);
            assert!(f1000 <= exact + 1e-11);
        }
    }

    #[test]
    fn envelope_extends_outside_the_domain() {
        let quad = quad();
        let f0 = -(4.0 * PI).ln();
        // Eigenvalues (0.8, -0.1, -0.7): both ends far outside (-1/3, 2/3).
        let q = diag_q(0.8, -0.1);
        assert!(matches!(
            eval_f(&q, &quad),
            Err(CoreError::DomainViolation { .. })
        ));
        let e = eval_f_moreau(&q, 50.0, &quad).unwrap();
        assert!(e.value.is_finite() && e.value >= f0);
        assert!(e.gradient.norm().is_finite());
        assert!(e.converged);
        // The proximal point pulled back inside: gradient = m (Q - prox)
        // reconstructs a prox with admissible eigenvalues.
        let prox = q - e.gradient * (1.0 / 50.0);
        let l = eigenvalues_q(&prox);
        assert!(l[0] < 2.0 / 3.0 && l[2] > -1.0 / 3.0, "prox spectrum {l:?}");
    }

    #[test]
    fn envelope_gradient_is_scaled_proximal_distance() {
        // The gradient eigenvalues are the dual exponents, and they equal
        // m (lambda - pi) with pi the proximal moments; cross-check by
        // reconstructing the proximal tensor and re-evaluating f there.
        let quad = quad();
        let mut r = rng(27);
        for _ in 0..10 {
            let q = random_interior_q(&mut r);
            let m = 20.0;
            let env = eval_f_moreau(&q, m, &quad).unwrap();
            let prox = q - env.gradient * (1.0 / m);
            let f_at_prox = eval_f(&prox, &quad).unwrap().value;
            let reconstructed = f_at_prox + 0.5 * m * (q - prox).norm_sq();
            assert!(
                (reconstructed - env.value).abs() <= 1e-8 * (1.0 + env.value.abs()),
                "value {} vs reconstruction {reconstructed}",
                env.value
            );
        }
    }

    #[test]
    fn envelope_gradient_is_m_lipschitz() {
        let quad = quad();
        let mut r = rng(28);
        for _ in 0..50 {
            // Mix interior and far-out tensors.
            let a = random_interior_q(&mut r) * r.random_range(0.5..3.0);
            let b = random_interior_q(&mut r) * r.random_range(0.5..3.0);
            for m in [5.0, 200.0] {
                let ga = eval_f_moreau(&a, m, &quad).unwrap().gradient;
                let gb = eval_f_moreau(&b, m, &quad).unwrap().gradient;
                let lhs = (ga - gb).norm();
                let rhs = m * (a - b).norm();
                assert!(
                    lhs <= rhs * (1.0 + 1e-9) + m * 1e-10,
                    "Lipschitz defect: {lhs} vs {rhs} at m = {m}"
                );
            }
        }
    }

    /// Brute-force check of the envelope against its defining nested
    /// minimization: grid + pattern-search over the proximal eigenvalues
    /// (the proximal point shares the eigenframe, so the search is
    /// two-dimensional).
    #[test]
    fn envelope_matches_nested_minimization() {
        let quad = quad();
        let cases = [
            (0.3, 0.0, 10.0),
            (0.5, -0.2, 100.0),
            (0.75, -0.3, 50.0), // outside the exact domain
        ];
        for &(l1, l2, m) in &cases {
            let q = diag_q(l1, l2);
            let lam = eigenvalues_q(&q);
            let objective = |y1: f64, y2: f64| -> f64 {
                let y3 = -y1 - y2;
                let y = [y1, y2, y3];
                let mut ys = y;
                ys.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if ys[0] >= 2.0 / 3.0 - 2.0 * DOMAIN_MARGIN
                    || ys[2] <= -1.0 / 3.0 + 2.0 * DOMAIN_MARGIN
                {
                    return f64::INFINITY;
                }
                match eval_f(&diag_q(y1, y2), &quad) {
                    Ok(e) => {
                        let dist2 = (lam[0] - ys[0]).powi(2)
                            + (lam[1] - ys[1]).powi(2)
                            + (lam[2] - ys[2]).powi(2);
                        e.value + 0.5 * m * dist2
                    }
                    Err(_) => f64::INFINITY,
                }
            };
            // Coarse grid.
            let mut best = (f64::INFINITY, 0.0, 0.0);
            let steps = 40;
            for i in 0..=steps {
                let y1 = -0.32 + (0.65 + 0.32) * i as f64 / steps as f64;
                for j in 0..=steps {
                    let y2 = -0.32 + (0.65 + 0.32) * j as f64 / steps as f64;
                    let v = objective(y1, y2);
                    if v < best.0 {
                        best = (v, y1, y2);
                    }
                }
            }
            // Pattern-search refinement.
            let (mut v, mut y1, mut y2) = best;
            let mut h = 0.025;
            while h > 1e-7 {
                let mut improved = false;
                for (d1, d2) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h), (h, h), (-h, -h)] {
                    let t = objective(y1 + d1, y2 + d2);
                    if t < v {
                        v = t;
                        y1 += d1;
                        y2 += d2;
                        improved = true;
                    }
                }
                if !improved {
                    h *= 0.5;
                }
            }
            let env = eval_f_moreau(&q, m, &quad).unwrap();
            assert!(
                (env.value - v).abs() <= 1e-5 * (1.0 + v.abs()),
                "envelope {} vs brute force {v} at ({l1}, {l2}, m = {m})",
                env.value
            );
        }
    }

    #[test]
    fn envelope_respects_global_lower_bound() {
        // f_m >= min f = -log(4 pi) everywhere, even far outside.
        let quad = quad();
        let f0 = -(4.0 * PI).ln();
        let mut r = rng(29);
        for _ in 0..50 {
            let q = random_interior_q(&mut r) * r.random_range(0.1..5.0);
            let e = eval_f_moreau(&q, 30.0, &quad).unwrap();
            assert!(e.value >= f0 - 1e-11);
        }
    }
}
