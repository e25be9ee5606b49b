//! Time integration of the coupled flow / orientation / temperature system.
//!
//! One step advances velocity, Q-tensor, and temperature by a first-order
//! IMEX split. Transport, stretching, stress divergence, and thermal sources
//! are evaluated explicitly from the step-start state; the stiff diffusion in
//! each equation is absorbed implicitly through a diagonal spectral filter at
//! a frozen reference coefficient (the maximum of the variable coefficient
//! over the grid, so the explicit remainder is damping). Algebraically the
//! update for each prognostic field is
//!
//! ```text
//! new = old + dt * F_hat / (1 + dt * c_ref * |k|^2)
//! ```
//!
//! where `F_hat` is the full explicit right-hand side in spectral space; this
//! is identical to compensated implicit Euler for the reference diffusion and
//! leaves every fixed point of the continuous right-hand side exactly fixed.
//!
//! Nonlinear products feeding the band-limited velocity and Q equations are
//! dealiased by the 2/3 rule. The temperature equation is advanced with its
//! sources kept in physical space, so the pointwise sign of each production
//! term survives discretization; temperature positivity is enforced by a
//! hard failure (never by clipping) when the configured floor is crossed.

use std::f64;

use nalgebra::Matrix3;
use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::fields::{
    read_snapshot, write_snapshot, Grid, ScalarField, Snapshot, SpectralEngine, TensorField,
    VectorField,
};
use crate::potential::{
    eval_f, eval_f_moreau, eval_thermo, truncate_u, GSpec, SphereQuadrature, ThermoFunctions,
};
use crate::tensor::{stretching, VelGrad};

type Cx = Complex<f64>;

/// Default CFL number above which a step emits a warning flag.
pub const CFL_WARN: f64 = 0.5;

/// Default CFL number above which a step aborts with `CflExceeded`.
pub const CFL_ABORT: f64 = 5.0;

/// Default hard floor for the pointwise temperature minimum.
pub const THETA_FLOOR: f64 = 1e-10;

/// Bulk potential selector: the singular entropy functional or its envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialMode {
    /// Singular potential; fails on eigenvalues outside (-1/3, 2/3).
    Exact,
    /// Envelope regularization with the given proximal weight `m > 0`.
    Moreau(f64),
}

/// Full prognostic state of the coupled system on one grid.
#[derive(Clone, Debug)]
pub struct State {
    pub grid: Grid,
    /// Velocity (divergence-free, band-limited).
    pub u: VectorField,
    /// Order parameter (band-limited).
    pub q: TensorField,
    /// Absolute temperature (> 0 pointwise, full band).
    pub theta: ScalarField,
    /// Pressure recovered from the last projection (mean zero, diagnostic).
    pub p: ScalarField,
    /// Physical time.
    pub t: f64,
    /// Completed step count since the initial data.
    pub step: u64,
}

impl State {
    /// Rest state: zero velocity and order parameter, uniform temperature.
    pub fn uniform(grid: Grid, theta0: f64) -> State {
        State {
            grid,
            u: VectorField::zeros(&grid),
            q: TensorField::zeros(&grid),
            theta: ScalarField::constant(&grid, theta0),
            p: ScalarField::zeros(&grid),
            t: 0.0,
            step: 0,
        }
    }

    /// Packs the state into the binary snapshot layout.
    pub fn to_snapshot(&self) -> Snapshot {
        Snapshot {
            grid: self.grid,
            u: self.u.clone(),
            q: self.q.clone(),
            theta: self.theta.clone(),
            p: self.p.clone(),
            time: self.t,
            step: self.step,
        }
    }

    /// Rebuilds a state from a snapshot, preserving time and step count.
    pub fn from_snapshot(snap: Snapshot) -> State {
        State {
            grid: snap.grid,
            u: snap.u,
            q: snap.q,
            theta: snap.theta,
            p: snap.p,
            t: snap.time,
            step: snap.step,
        }
    }

    /// Writes the state to `path` in the snapshot format.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_snapshot(path, &self.to_snapshot())
    }

    /// Reads a state previously written by [`State::save`].
    pub fn load(path: &std::path::Path) -> Result<State> {
        Ok(State::from_snapshot(read_snapshot(path)?))
    }
}

/// Scheme and model parameters for one run.
#[derive(Clone, Debug)]
pub struct SchemeParams {
    /// Time step.
    pub dt: f64,
    /// Flow-alignment parameter of the stretching tensor.
    pub xi: f64,
    /// Bulk potential mode (singular or envelope).
    pub potential: PotentialMode,
    /// Regularization weight: velocity r-damping strength, initial-data
    /// mollification radius, and thermal-coupling truncation scale.
    pub delta: f64,
    /// Spatial mollification radius applied to the rotational coefficient.
    pub epsilon: f64,
    /// Exponent of the `delta`-weighted gradient damping; active only when
    /// `delta > 0`, constrained to (3, 10/3) by the well-posedness analysis.
    pub r: f64,
    /// Static body force on the velocity; `None` means zero.
    pub forcing: Option<VectorField>,
    /// Material functions, already truncated at scale `1/delta`.
    pub thermo: ThermoFunctions,
    /// Sphere quadrature used by every potential evaluation.
    pub quad: SphereQuadrature,
    /// Temperature floor whose crossing aborts the run.
    pub theta_floor: f64,
    /// CFL number above which a step is flagged.
    pub cfl_warn: f64,
    /// CFL number above which a step aborts.
    pub cfl_abort: f64,
}

impl SchemeParams {
    /// Assembles parameters, applying the `delta` truncation to the raw
    /// thermal coupling so callers pass the untruncated model.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dt: f64,
        xi: f64,
        potential: PotentialMode,
        delta: f64,
        epsilon: f64,
        r: f64,
        thermo: &ThermoFunctions,
        quad: SphereQuadrature,
    ) -> SchemeParams {
        SchemeParams {
            dt,
            xi,
            potential,
            delta,
            epsilon,
            r,
            forcing: None,
            thermo: truncate_u(thermo, delta),
            quad,
            theta_floor: THETA_FLOOR,
            cfl_warn: CFL_WARN,
            cfl_abort: CFL_ABORT,
        }
    }
}

/// Per-step work products: derivatives, material planes, molecular field,
/// stretching, and potential data, all evaluated at the step-start state.
/// Shared by the update sub-steps and by diagnostics so the potential pass
/// runs exactly once per step.
#[derive(Debug)]
pub struct StepAux {
    /// Advective CFL number `dt * max|u| / spacing`.
    pub cfl: f64,
    /// Spectra of the prognostic fields at the step start.
    pub u_spec: [Vec<Cx>; 3],
    pub q_spec: [Vec<Cx>; 5],
    pub theta_spec: Vec<Cx>,
    /// Velocity gradient planes: `grad_u[i][j] = d_j u_i`.
    pub grad_u: [[Vec<f64>; 3]; 3],
    /// Directional derivative of Q along each axis.
    pub gq: [TensorField; 3],
    /// Temperature gradient planes.
    pub grad_theta: [Vec<f64>; 3],
    /// Molecular field.
    pub h: TensorField,
    /// Stretching tensor.
    pub s: TensorField,
    /// Bulk potential value per site.
    pub f_val: Vec<f64>,
    /// Bulk potential gradient per site.
    pub f_grad: TensorField,
    /// Coupling strength G per site and its projected derivative.
    pub g_val: Vec<f64>,
    pub g_deriv: TensorField,
    /// Thermal coupling and transport coefficients per site.
    pub u_delta: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub mu_plane: Vec<f64>,
    pub kappa_plane: Vec<f64>,
    /// Mollified, clamped rotational coefficient and its grid maximum.
    pub gamma_eps: Vec<f64>,
    pub gamma_max: f64,
    /// Sites where the mollified coefficient left its configured bounds.
    pub clamp_sites: usize,
    /// Worst Newton iteration count over the potential pass.
    pub newton_max: u32,
    /// Sites whose Newton solve stopped above the primary tolerance.
    pub newton_unconverged: usize,
}

/// Summary flags for one completed step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    pub cfl: f64,
    pub cfl_warning: bool,
    pub gamma_clamp_sites: usize,
    pub newton_max_iters: u32,
    pub newton_unconverged: usize,
}

/// Stress planes: `sigma[i][j]` holds the (i, j) matrix entry per site.
pub type StressPlanes = [[Vec<f64>; 3]; 3];

fn zero_planes(n: usize) -> [[Vec<f64>; 3]; 3] {
    std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]))
}


fn plane_min(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, &x| m.min(x))
}

fn plane_max(v: &[f64]) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
}

/// Evaluated material planes at one temperature field.
struct ThermoPlanes {
    u: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
    kappa: Vec<f64>,
}

fn thermo_pass(theta: &[f64], thermo: &ThermoFunctions) -> ThermoPlanes {
    let n = theta.len();
    let mut out = ThermoPlanes {
        u: vec![0.0; n],
        u1: vec![0.0; n],
        u2: vec![0.0; n],
        mu: vec![0.0; n],
        gamma: vec![0.0; n],
        kappa: vec![0.0; n],
    };
    for (idx, &t) in theta.iter().enumerate() {
        let pt = eval_thermo(t, thermo);
        out.u[idx] = pt.u;
        out.u1[idx] = pt.u1;
        out.u2[idx] = pt.u2;
        out.mu[idx] = pt.mu;
        out.gamma[idx] = pt.gamma;
        out.kappa[idx] = pt.kappa;
    }
    out
}

/// Bulk potential planes at one order-parameter field.
struct PotentialPlanes {
    f_val: Vec<f64>,
    f_grad: TensorField,
    g_val: Vec<f64>,
    g_deriv: TensorField,
    newton_max: u32,
    newton_unconverged: usize,
}

fn potential_pass(
    grid: &Grid,
    q: &TensorField,
    mode: PotentialMode,
    quad: &SphereQuadrature,
    g_spec: &GSpec,
) -> Result<PotentialPlanes> {
    let n = grid.len();
    let mut out = PotentialPlanes {
        f_val: vec![0.0; n],
        f_grad: TensorField::zeros(grid),
        g_val: vec![0.0; n],
        g_deriv: TensorField::zeros(grid),
        newton_max: 0,
        newton_unconverged: 0,
    };
    for idx in 0..n {
        let qt = q.get(idx);
        let ev = match mode {
            PotentialMode::Exact => eval_f(&qt, quad)?,
            PotentialMode::Moreau(m) => eval_f_moreau(&qt, m, quad)?,
        };
        out.f_val[idx] = ev.value;
        out.f_grad.set(idx, ev.gradient);
        out.newton_max = out.newton_max.max(ev.newton_iters);
        if !ev.converged {
            out.newton_unconverged += 1;
        }
        let (gv, gd) = g_spec.eval_q(&qt);
        out.g_val[idx] = gv;
        out.g_deriv.set(idx, gd);
    }
    Ok(out)
}

fn velgrad_at(grad_u: &[[Vec<f64>; 3]; 3], idx: usize) -> VelGrad {
    VelGrad::new(Matrix3::new(
        grad_u[0][0][idx],
        grad_u[0][1][idx],
        grad_u[0][2][idx],
        grad_u[1][0][idx],
        grad_u[1][1][idx],
        grad_u[1][2][idx],
        grad_u[2][0][idx],
        grad_u[2][1][idx],
        grad_u[2][2][idx],
    ))
}

/// Evaluates derivatives, material planes, the molecular field, and the
/// stretching tensor at the current state. Fails on nonpositive temperature
/// or an unrecoverable potential evaluation.
pub fn prepare(state: &State, params: &SchemeParams) -> Result<StepAux> {
    let engine = SpectralEngine::new(state.grid);
    prepare_with(&engine, state, params)
}

/// [`prepare`] against a caller-owned transform engine.
pub fn prepare_with(
    engine: &SpectralEngine,
    state: &State,
    params: &SchemeParams,
) -> Result<StepAux> {
    let grid = state.grid;
    let n = grid.len();
    let dim = grid.dim();

    let theta_min = plane_min(&state.theta.data);
    if !(theta_min > 0.0) {
        return Err(CoreError::NonpositiveTemperature { theta: theta_min });
    }

    let u_spec: [Vec<Cx>; 3] = std::array::from_fn(|i| engine.forward(&state.u.comps[i]));
    let q_spec: [Vec<Cx>; 5] = std::array::from_fn(|c| engine.forward(&state.q.comps[c]));
    let theta_spec = engine.forward(&state.theta.data);

    let mut grad_u = zero_planes(n);
    for i in 0..3 {
        for axis in 0..dim {
            grad_u[i][axis] = engine.inverse(&engine.deriv_spec(&u_spec[i], axis));
        }
    }

    let k2 = engine.k2();
    let mut gq = [
        TensorField::zeros(&grid),
        TensorField::zeros(&grid),
        TensorField::zeros(&grid),
    ];
    let mut lap_q = TensorField::zeros(&grid);
    for c in 0..5 {
        for (axis, gq_axis) in gq.iter_mut().enumerate().take(dim) {
            gq_axis.comps[c] = engine.inverse(&engine.deriv_spec(&q_spec[c], axis));
        }
        let lap_spec: Vec<Cx> = q_spec[c]
            .iter()
            .zip(k2.iter())
            .map(|(z, &kk)| -kk * z)
            .collect();
        lap_q.comps[c] = engine.inverse(&lap_spec);
    }

    let mut grad_theta: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for (axis, gt) in grad_theta.iter_mut().enumerate().take(dim) {
        *gt = engine.inverse(&engine.deriv_spec(&theta_spec, axis));
    }

    let tp = thermo_pass(&state.theta.data, &params.thermo);
    let pp = potential_pass(&grid, &state.q, params.potential, &params.quad, &params.thermo.g)?;

    let mut h = TensorField::zeros(&grid);
    let mut s = TensorField::zeros(&grid);
    for idx in 0..n {
        let qt = state.q.get(idx);
        let ht = lap_q.get(idx) - pp.f_grad.get(idx) + pp.g_deriv.get(idx) * tp.u[idx];
        h.set(idx, ht);
        s.set(idx, stretching(&velgrad_at(&grad_u, idx), &qt, params.xi));
    }

    let (gamma_lo, gamma_hi) = params.thermo.rotational.bounds();
    let mut gamma_eps = engine.mollify_plane(&tp.gamma, params.epsilon);
    let mut clamp_sites = 0;
    for g in &mut gamma_eps {
        let c = g.clamp(gamma_lo, gamma_hi);
        if c != *g {
            clamp_sites += 1;
            *g = c;
        }
    }
    let gamma_max = plane_max(&gamma_eps);

    let mut umax_sq = 0.0_f64;
    for idx in 0..n {
        let uu = state.u.comps[0][idx].powi(2)
            + state.u.comps[1][idx].powi(2)
            + state.u.comps[2][idx].powi(2);
        umax_sq = umax_sq.max(uu);
    }
    let cfl = params.dt * umax_sq.sqrt() / grid.spacing();

    Ok(StepAux {
        cfl,
        u_spec,
        q_spec,
        theta_spec,
        grad_u,
        gq,
        grad_theta,
        h,
        s,
        f_val: pp.f_val,
        f_grad: pp.f_grad,
        g_val: pp.g_val,
        g_deriv: pp.g_deriv,
        u_delta: tp.u,
        u1: tp.u1,
        u2: tp.u2,
        mu_plane: tp.mu,
        kappa_plane: tp.kappa,
        gamma_eps,
        gamma_max,
        clamp_sites,
        newton_max: pp.newton_max,
        newton_unconverged: pp.newton_unconverged,
    })
}

/// Molecular field at a state: Laplacian of Q minus the projected bulk
/// gradient plus the thermal coupling term. Symmetric traceless by
/// construction of the component representation.
pub fn assemble_h(state: &State, params: &SchemeParams) -> Result<TensorField> {
    let aux = prepare(state, params)?;
    Ok(aux.h)
}

/// Builds the full explicit stress from precomputed planes. Pressure is not
/// included; it is recovered by the projection in the momentum update.
fn assemble_stress_planes(
    grid: &Grid,
    q: &TensorField,
    h: &TensorField,
    grad_u: &[[Vec<f64>; 3]; 3],
    gq: &[TensorField; 3],
    mu_plane: &[f64],
    xi: f64,
    delta: f64,
    r: f64,
) -> StressPlanes {
    let n = grid.len();
    let mut sigma = zero_planes(n);
    let third = Matrix3::identity() / 3.0;
    for idx in 0..n {
        let qt = q.get(idx);
        let ht = h.get(idx);
        let qm = qt.to_matrix();
        let hm = ht.to_matrix();
        let m = qm + third;
        let du = velgrad_at(grad_u, idx).m;
        let grads = [gq[0].get(idx), gq[1].get(idx), gq[2].get(idx)];

        let mut sig = (du + du.transpose()) * mu_plane[idx];
        sig += m * (2.0 * xi * ht.dot(&qt));
        sig -= (hm * m + m * hm) * xi;
        sig += qm * hm - hm * qm;
        sig -= crate::tensor::odot(&grads);
        if delta > 0.0 {
            let g2: f64 = du.iter().map(|x| x * x).sum();
            sig += du * (delta * g2.powf((r - 2.0) / 2.0));
        }

        for i in 0..3 {
            for j in 0..3 {
                sigma[i][j][idx] = sig[(i, j)];
            }
        }
    }
    sigma
}

/// Explicit stress at a state given its molecular field: viscous part,
/// alignment terms, commutator, elastic distortion stress, and (for
/// `delta > 0`) the gradient damping.
pub fn assemble_stress(
    state: &State,
    h: &TensorField,
    params: &SchemeParams,
) -> Result<StressPlanes> {
    let engine = SpectralEngine::new(state.grid);
    let dim = state.grid.dim();
    let n = state.grid.len();

    let mut grad_u = zero_planes(n);
    for i in 0..3 {
        let spec = engine.forward(&state.u.comps[i]);
        for (axis, plane) in grad_u[i].iter_mut().enumerate().take(dim) {
            *plane = engine.inverse(&engine.deriv_spec(&spec, axis));
        }
    }
    let gq = engine.grad_tensor(&state.q);
    let tp = thermo_pass(&state.theta.data, &params.thermo);

    Ok(assemble_stress_planes(
        &state.grid,
        &state.q,
        h,
        &grad_u,
        &gq,
        &tp.mu,
        params.xi,
        params.delta,
        params.r,
    ))
}

/// Q-tensor update: explicit transport/stretching/relaxation filtered by the
/// implicit diffusion factor at the frozen maximal rotational coefficient.
fn update_q(
    engine: &SpectralEngine,
    state: &State,
    aux: &StepAux,
    params: &SchemeParams,
) -> TensorField {
    let grid = state.grid;
    let n = grid.len();
    let dt = params.dt;
    let k2 = engine.k2();
    let mut out = TensorField::zeros(&grid);
    for c in 0..5 {
        let mut rhs = vec![0.0; n];
        for (idx, r) in rhs.iter_mut().enumerate() {
            let adv = state.u.comps[0][idx] * aux.gq[0].comps[c][idx]
                + state.u.comps[1][idx] * aux.gq[1].comps[c][idx]
                + state.u.comps[2][idx] * aux.gq[2].comps[c][idx];
            *r = -adv + aux.s.comps[c][idx] + aux.gamma_eps[idx] * aux.h.comps[c][idx];
        }
        let mut rhs_spec = engine.forward(&rhs);
        engine.dealias_spec(&mut rhs_spec);
        let mut new_spec = aux.q_spec[c].clone();
        for ((z, f), &kk) in new_spec.iter_mut().zip(rhs_spec.iter()).zip(k2.iter()) {
            *z += dt * f / (1.0 + dt * aux.gamma_max * kk);
        }
        out.comps[c] = engine.inverse(&new_spec);
    }
    out
}

/// Momentum update: explicit advection, stress divergence, and forcing,
/// projected to the divergence-free band and filtered by the implicit
/// viscous factor at the frozen maximal viscosity. Returns the new velocity
/// and the mean-zero pressure recovered from the projection.
fn update_momentum(
    engine: &SpectralEngine,
    state: &State,
    aux: &StepAux,
    params: &SchemeParams,
) -> (VectorField, ScalarField) {
    let grid = state.grid;
    let n = grid.len();
    let dim = grid.dim();
    let dt = params.dt;
    let k2 = engine.k2();

    let sigma = assemble_stress_planes(
        &grid,
        &state.q,
        &aux.h,
        &aux.grad_u,
        &aux.gq,
        &aux.mu_plane,
        params.xi,
        params.delta,
        params.r,
    );

    let mut f_spec: [Vec<Cx>; 3] = std::array::from_fn(|_| Vec::new());
    for i in 0..3 {
        let mut f_phys = vec![0.0; n];
        for (idx, f) in f_phys.iter_mut().enumerate() {
            let adv = state.u.comps[0][idx] * aux.grad_u[i][0][idx]
                + state.u.comps[1][idx] * aux.grad_u[i][1][idx]
                + state.u.comps[2][idx] * aux.grad_u[i][2][idx];
            *f = -adv;
            if let Some(g) = &params.forcing {
                *f += g.comps[i][idx];
            }
        }
        let mut fs = engine.forward(&f_phys);
        engine.dealias_spec(&mut fs);
        for axis in 0..dim {
            let mut ss = engine.forward(&sigma[i][axis]);
            engine.dealias_spec(&mut ss);
            let ds = engine.deriv_spec(&ss, axis);
            for (a, b) in fs.iter_mut().zip(ds.iter()) {
                *a += b;
            }
        }
        f_spec[i] = fs;
    }

    let p_spec = engine.pressure_spec(&f_spec);
    engine.leray_spec(&mut f_spec);

    let mu_ref = plane_max(&aux.mu_plane);
    let mut u_new = VectorField::zeros(&grid);
    for i in 0..3 {
        let mut spec = aux.u_spec[i].clone();
        for ((z, f), &kk) in spec.iter_mut().zip(f_spec[i].iter()).zip(k2.iter()) {
            *z += dt * f / (1.0 + dt * mu_ref * kk);
        }
        u_new.comps[i] = engine.inverse(&spec);
    }
    let p = ScalarField {
        data: engine.inverse(&p_spec),
    };
    (u_new, p)
}

/// Temperature update in the bounded-coefficient form: the prefactor
/// `A = 1 + theta U'' G >= 1` divides the conductive flux and the production
/// terms pointwise, and the implicit filter runs at the maximal `kappa / A`.
/// Fails if the updated minimum crosses the configured floor.
fn update_theta(
    engine: &SpectralEngine,
    state: &State,
    aux: &StepAux,
    params: &SchemeParams,
) -> Result<ScalarField> {
    let grid = state.grid;
    let n = grid.len();
    let dim = grid.dim();
    let dt = params.dt;
    let k2 = engine.k2();

    // Conductive term div(kappa grad theta) from physical flux planes.
    let mut div_flux_spec = vec![Cx::new(0.0, 0.0); n];
    for axis in 0..dim {
        let flux: Vec<f64> = aux.kappa_plane
            .iter()
            .zip(aux.grad_theta[axis].iter())
            .map(|(k, g)| k * g)
            .collect();
        let fs = engine.forward(&flux);
        let ds = engine.deriv_spec(&fs, axis);
        for (a, b) in div_flux_spec.iter_mut().zip(ds.iter()) {
            *a += b;
        }
    }
    let div_flux = engine.inverse(&div_flux_spec);

    let mut rhs = vec![0.0; n];
    let mut sigma_ref = 0.0_f64;
    for (idx, out) in rhs.iter_mut().enumerate() {
        let theta = state.theta.data[idx];
        let a = 1.0 + theta * aux.u2[idx] * aux.g_val[idx];
        sigma_ref = sigma_ref.max(aux.kappa_plane[idx] / a);

        let du = velgrad_at(&aux.grad_u, idx).m;
        let sym2: f64 = {
            let s = du + du.transpose();
            s.iter().map(|x| x * x).sum()
        };
        let g2: f64 = du.iter().map(|x| x * x).sum();
        let ht = aux.h.get(idx);
        let st = aux.s.get(idx);
        let gd = aux.g_deriv.get(idx);
        let gamma = aux.gamma_eps[idx];

        let coupling = gd.dot(&(st + ht * gamma));
        let mut src = -theta * aux.u1[idx] * coupling;
        src += 0.5 * aux.mu_plane[idx] * sym2;
        src += gamma * ht.norm_sq();
        if params.delta > 0.0 {
            src += params.delta * g2.powf(params.r / 2.0);
        }

        let adv = state.u.comps[0][idx] * aux.grad_theta[0][idx]
            + state.u.comps[1][idx] * aux.grad_theta[1][idx]
            + state.u.comps[2][idx] * aux.grad_theta[2][idx];
        *out = -adv + (div_flux[idx] + src) / a;
    }

    let rhs_spec = engine.forward(&rhs);
    let mut new_spec = aux.theta_spec.clone();
    for ((z, f), &kk) in new_spec.iter_mut().zip(rhs_spec.iter()).zip(k2.iter()) {
        *z += dt * f / (1.0 + dt * sigma_ref * kk);
    }
    let theta_new = engine.inverse(&new_spec);

    let theta_min = plane_min(&theta_new);
    if !(theta_min > params.theta_floor) {
        return Err(CoreError::TemperatureCollapse {
            theta_min,
            step: state.step + 1,
        });
    }
    Ok(ScalarField { data: theta_new })
}

/// Advances one step from precomputed work products. Aborts on a CFL number
/// above the configured limit or on temperature collapse.
pub fn advance_with(
    engine: &SpectralEngine,
    state: &State,
    aux: &StepAux,
    params: &SchemeParams,
) -> Result<State> {
    if !(aux.cfl <= params.cfl_abort) {
        return Err(CoreError::CflExceeded {
            cfl: aux.cfl,
            limit: params.cfl_abort,
        });
    }
    let q = update_q(engine, state, aux, params);
    let (u, p) = update_momentum(engine, state, aux, params);
    let theta = update_theta(engine, state, aux, params)?;
    Ok(State {
        grid: state.grid,
        u,
        q,
        theta,
        p,
        t: state.t + params.dt,
        step: state.step + 1,
    })
}

/// One full IMEX step; returns the new state and the work products of the
/// step-start state for diagnostics.
pub fn step(state: &State, params: &SchemeParams) -> Result<(State, StepAux)> {
    let engine = SpectralEngine::new(state.grid);
    let aux = prepare_with(&engine, state, params)?;
    let new_state = advance_with(&engine, state, &aux, params)?;
    Ok((new_state, aux))
}

/// Result of a time loop: the final state, the diagnostics series, per-step
/// summary flags, and the worst CFL number seen.
pub struct RunOutput {
    pub final_state: State,
    pub records: Vec<crate::diagnostics::DiagnosticsRecord>,
    pub reports: Vec<StepReport>,
    pub max_cfl: f64,
}

/// Advances `n_steps` steps, recording diagnostics every `diag_every` steps
/// (and always at the initial and final states). The callback receives each
/// recorded (step index, state, record) triple in order; its error aborts
/// the run. `diag_every = 0` records only the endpoints.
pub fn run(
    state: State,
    params: &SchemeParams,
    n_steps: u64,
    diag_every: u64,
    mut on_record: impl FnMut(u64, &State, &crate::diagnostics::DiagnosticsRecord) -> Result<()>,
) -> Result<RunOutput> {
    let engine = SpectralEngine::new(state.grid);
    let mut state = state;
    let mut records = Vec::new();
    let mut reports = Vec::with_capacity(n_steps as usize);
    let mut e0 = None;
    let mut max_cfl = 0.0_f64;

    for k in 0..=n_steps {
        let aux = prepare_with(&engine, &state, params)?;
        max_cfl = max_cfl.max(aux.cfl);
        let due = k == 0 || k == n_steps || (diag_every > 0 && k % diag_every == 0);
        if due {
            let rec = crate::diagnostics::energy_report_with(&engine, &state, &aux, params, e0);
            if e0.is_none() {
                e0 = Some(rec.total_energy);
            }
            on_record(k, &state, &rec)?;
            records.push(rec);
        }
        if k == n_steps {
            break;
        }
        reports.push(StepReport {
            cfl: aux.cfl,
            cfl_warning: aux.cfl > params.cfl_warn,
            gamma_clamp_sites: aux.clamp_sites,
            newton_max_iters: aux.newton_max,
            newton_unconverged: aux.newton_unconverged,
        });
        state = advance_with(&engine, &state, &aux, params)?;
    }

    Ok(RunOutput {
        final_state: state,
        records,
        reports,
        max_cfl,
    })
}
