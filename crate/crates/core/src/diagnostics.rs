//! Per-step structural diagnostics: energy budget, entropy balance,
//! temperature positivity, and exactness residuals.
//!
//! Every quantity the analysis of the continuous system asserts — total
//! energy conservation, nonnegative entropy production, an exponential
//! floor on the temperature minimum, eigenvalue confinement, exact
//! incompressibility and tracelessness — is computed here as a number per
//! recorded step so a run can be audited after the fact. Grid sums use
//! compensated accumulation to keep the residuals meaningful at the
//! 1e-12 level.

use std::path::Path;

use crate::dynamics::{SchemeParams, State, StepAux};
use crate::error::{CoreError, Result};
use crate::fields::{ScalarField, SpectralEngine, TensorField};
use crate::potential::eval_thermo;
use crate::tensor::eigenvalues_q;

/// Exactness residuals of one recorded state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    /// Largest pointwise spectral divergence of the velocity.
    pub div_u: f64,
    /// Largest pointwise trace of Q (zero by representation; recomputed).
    pub trace_q: f64,
    /// Relative drift of the total energy from the first record.
    pub energy_drift: f64,
}

/// One row of the diagnostics time series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// Integral of half the squared velocity.
    pub kinetic: f64,
    /// Integral of half the squared Q gradient.
    pub elastic: f64,
    /// Integral of the bulk potential.
    pub bulk: f64,
    /// Minus the integral of (U - theta U') G.
    pub thermal_coupling: f64,
    /// Integral of the temperature.
    pub heat: f64,
    /// Sum of the five parts above; conserved by the continuous system.
    pub total_energy: f64,
    /// Integral of the entropy density 1 + log(theta) + U'(theta) G(Q).
    pub entropy: f64,
    /// Integral of the entropy production density (each term nonnegative).
    pub entropy_production: f64,
    /// Smallest pointwise production density over the grid; rounding aside,
    /// never negative.
    pub production_min: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Extreme Q eigenvalues over the grid; confined to (-1/3, 2/3) when
    /// the singular potential is active.
    pub q_eig_min: f64,
    pub q_eig_max: f64,
    pub residuals: Residuals,
}

/// Result of auditing a temperature-minimum history against the structural
/// exponential floor.
#[derive(Clone, Copy, Debug)]
pub struct PositivityAudit {
    /// Least-squares decay rate of -log theta_min(t); negative when the
    /// minimum is rising.
    pub lambda_hat: f64,
    /// Admissible decay rate computed from the configured coefficient
    /// bounds and the observed temperature range.
    pub lambda_bound: f64,
    /// Smallest temperature minimum over the history.
    pub theta_min_overall: f64,
    /// True if any minimum is nonpositive or the history dips below the
    /// exponential floor by more than the given tolerance.
    pub violated: bool,
}

/// Compensated (Kahan) sum of a plane.
pub fn compensated_sum(plane: &[f64]) -> f64 {
    // Kahan-Babuska (Neumaier) form: tracks the rounding error of each
    // addition on whichever side is smaller, so cancellation between large
    // intermediate sums and later terms is also compensated.
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for &v in plane {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Pointwise entropy production density. Every contribution is a square
/// divided by the (positive) temperature, so the result is nonnegative up
/// to rounding whenever the inputs are physical.
#[allow(clippy::too_many_arguments)]
fn production_at(
    theta: f64,
    sym2: f64,
    grad2: f64,
    h_norm_sq: f64,
    grad_theta_sq: f64,
    mu: f64,
    gamma: f64,
    kappa: f64,
    delta: f64,
    r: f64,
) -> f64 {
    let mut num = 0.5 * mu * sym2 + gamma * h_norm_sq + kappa * grad_theta_sq / theta;
    if delta > 0.0 {
        num += delta * grad2.powf(r / 2.0);
    }
    num / theta
}

fn velgrad_sums(grad_u: &[[Vec<f64>; 3]; 3], idx: usize) -> (f64, f64) {
    let mut sym2 = 0.0;
    let mut grad2 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let a = grad_u[i][j][idx];
            let s = a + grad_u[j][i][idx];
            sym2 += s * s;
            grad2 += a * a;
        }
    }
    (sym2, grad2)
}

/// Entropy production density of a state given its molecular field:
/// viscous, rotational, gradient-damping, and conductive dissipation, each
/// divided by the temperature.
pub fn entropy_production(
    state: &State,
    h: &TensorField,
    params: &SchemeParams,
) -> Result<ScalarField> {
    let grid = state.grid;
    let n = grid.len();
    let dim = grid.dim();
    let theta_min = state.theta.data.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(theta_min > 0.0) {
        return Err(CoreError::NonpositiveTemperature { theta: theta_min });
    }

    let engine = SpectralEngine::new(grid);
    let mut grad_u: [[Vec<f64>; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]));
    for i in 0..3 {
        let spec = engine.forward(&state.u.comps[i]);
        for (axis, plane) in grad_u[i].iter_mut().enumerate().take(dim) {
            *plane = engine.inverse(&engine.deriv_spec(&spec, axis));
        }
    }
    let theta_spec = engine.forward(&state.theta.data);
    let mut grad_theta: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
    for (axis, plane) in grad_theta.iter_mut().enumerate().take(dim) {
        *plane = engine.inverse(&engine.deriv_spec(&theta_spec, axis));
    }

    let (gamma_lo, gamma_hi) = params.thermo.rotational.bounds();
    let mut gamma_raw = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut kappa = vec![0.0; n];
    for (idx, &t) in state.theta.data.iter().enumerate() {
        let pt = eval_thermo(t, &params.thermo);
        gamma_raw[idx] = pt.gamma;
        mu[idx] = pt.mu;
        kappa[idx] = pt.kappa;
    }
    let mut gamma_eps = engine.mollify_plane(&gamma_raw, params.epsilon);
    for g in &mut gamma_eps {
        *g = g.clamp(gamma_lo, gamma_hi);
    }

    let mut out = ScalarField::zeros(&grid);
    for idx in 0..n {
        let (sym2, grad2) = velgrad_sums(&grad_u, idx);
        let gth2: f64 = (0..dim).map(|a| grad_theta[a][idx].powi(2)).sum();
        out.data[idx] = production_at(
            state.theta.data[idx],
            sym2,
            grad2,
            h.get(idx).norm_sq(),
            gth2,
            mu[idx],
            gamma_eps[idx],
            kappa[idx],
            params.delta,
            params.r,
        );
    }
    Ok(out)
}

/// Builds a full diagnostics record from precomputed step work products.
/// `e0` is the total energy of the run's first record (drift reference);
/// pass `None` for that first record.
pub fn energy_report_with(
    engine: &SpectralEngine,
    state: &State,
    aux: &StepAux,
    params: &SchemeParams,
    e0: Option<f64>,
) -> DiagnosticsRecord {
    let grid = state.grid;
    let n = grid.len();
    let dim = grid.dim();
    let cell = grid.cell_volume();

    let mut kin = vec![0.0; n];
    let mut ela = vec![0.0; n];
    let mut coup = vec![0.0; n];
    let mut ent = vec![0.0; n];
    let mut prod = vec![0.0; n];
    let mut trace_res = 0.0_f64;
    let mut theta_min = f64::INFINITY;
    let mut theta_max = f64::NEG_INFINITY;
    let mut eig_min = f64::INFINITY;
    let mut eig_max = f64::NEG_INFINITY;

    for idx in 0..n {
        let theta = state.theta.data[idx];
        theta_min = theta_min.min(theta);
        theta_max = theta_max.max(theta);

        kin[idx] = 0.5
            * (state.u.comps[0][idx].powi(2)
                + state.u.comps[1][idx].powi(2)
                + state.u.comps[2][idx].powi(2));

        let mut e = 0.0;
        for axis in 0..dim {
            e += aux.gq[axis].get(idx).norm_sq();
        }
        ela[idx] = 0.5 * e;

        coup[idx] = -(aux.u_delta[idx] - theta * aux.u1[idx]) * aux.g_val[idx];
        ent[idx] = 1.0 + theta.ln() + aux.u1[idx] * aux.g_val[idx];

        let (sym2, grad2) = velgrad_sums(&aux.grad_u, idx);
        let gth2: f64 = (0..dim).map(|a| aux.grad_theta[a][idx].powi(2)).sum();
        prod[idx] = production_at(
            theta,
            sym2,
            grad2,
            aux.h.get(idx).norm_sq(),
            gth2,
            aux.mu_plane[idx],
            aux.gamma_eps[idx],
            aux.kappa_plane[idx],
            params.delta,
            params.r,
        );

        let q = state.q.get(idx);
        let tr = (q.q11 + q.q22) + q.q33();
        trace_res = trace_res.max(tr.abs());
        let ev = eigenvalues_q(&q);
        eig_max = eig_max.max(ev[0]);
        eig_min = eig_min.min(ev[2]);
    }

    let kinetic = compensated_sum(&kin) * cell;
    let elastic = compensated_sum(&ela) * cell;
    let bulk = compensated_sum(&aux.f_val) * cell;
    let thermal_coupling = compensated_sum(&coup) * cell;
    let heat = compensated_sum(&state.theta.data) * cell;
    let total_energy = kinetic + elastic + bulk + thermal_coupling + heat;

    let production_min = prod.iter().cloned().fold(f64::INFINITY, f64::min);
    let div = engine.divergence(&state.u);
    let div_u = div.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let energy_drift = match e0 {
        Some(e0) => (total_energy - e0).abs() / e0.abs().max(1e-300),
        None => 0.0,
    };

    DiagnosticsRecord {
        t: state.t,
        kinetic,
        elastic,
        bulk,
        thermal_coupling,
        heat,
        total_energy,
        entropy: compensated_sum(&ent) * cell,
        entropy_production: compensated_sum(&prod) * cell,
        production_min,
        theta_min,
        theta_max,
        q_eig_min: eig_min,
        q_eig_max: eig_max,
        residuals: Residuals {
            div_u,
            trace_q: trace_res,
            energy_drift,
        },
    }
}

/// Self-contained [`energy_report_with`]: evaluates the step work products
/// for `state` first. Fails on nonpositive temperature or an unrecoverable
/// potential evaluation.
pub fn energy_report(
    state: &State,
    params: &SchemeParams,
    e0: Option<f64>,
) -> Result<DiagnosticsRecord> {
    let engine = SpectralEngine::new(state.grid);
    let aux = crate::dynamics::prepare_with(&engine, state, params)?;
    Ok(energy_report_with(&engine, state, &aux, params, e0))
}

/// Worst normalized defect of the discrete entropy balance over consecutive
/// record pairs: |d(entropy)/dt - production| / max(1, production), using
/// the production of the earlier record (consistent with the explicit
/// sources of the scheme). First-order small in the step size.
pub fn entropy_balance_residual(records: &[DiagnosticsRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(CoreError::InsufficientHistory {
            need: 2,
            have: records.len(),
        });
    }
    let mut worst = 0.0_f64;
    for pair in records.windows(2) {
        let dt = pair[1].t - pair[0].t;
        if dt <= 0.0 {
            return Err(CoreError::InsufficientHistory {
                need: 2,
                have: records.len(),
            });
        }
        let rate = (pair[1].entropy - pair[0].entropy) / dt;
        let p = pair[0].entropy_production;
        worst = worst.max((rate - p).abs() / p.abs().max(1.0));
    }
    Ok(worst)
}

/// Structural decay-rate bound for the temperature minimum, from the
/// configured coefficient bounds and the temperature window: the thermal
/// coupling can cool no faster than the weighted slope of U times the
/// mixed stretching/rotation couplings, after the quadratic dissipation
/// absorbs its share.
///
/// `theta_lo` is the anchor of the certified floor (the minimum
/// temperature at the start of the window under audit), `theta_hi` the
/// largest temperature reached; the pair also brackets the slope
/// estimates for coupling models without a global slope bound.
pub fn positivity_rate_bound(params: &SchemeParams, theta_lo: f64, theta_hi: f64) -> f64 {
    // Worst-case order parameter magnitude and coupling slope.
    let q_bar = (2.0_f64 / 3.0).sqrt();
    let g1 = 2.0 * q_bar * params.thermo.g.slope_bound();
    let c_mix = 2.0 * params.xi * (1.0 + q_bar) * g1;
    let c_u = params.thermo.weighted_slope_bound(theta_lo, theta_hi);
    let (mu_lo, _) = params.thermo.viscosity.bounds();
    let (_, gamma_hi) = params.thermo.rotational.bounds();
    let (kappa_lo, kappa_hi) = params.thermo.conductivity.bounds();
    let source_bound = c_u * c_u * (c_mix * c_mix / (4.0 * mu_lo) + 0.5 * gamma_hi * g1 * g1);
    (source_bound / theta_lo) * (kappa_hi / kappa_lo)
}

/// Audits a temperature-minimum history: fits the decay rate of
/// -log theta_min(t) and checks the history against the exponential floor
/// exp(-lambda_bound * t) within `tolerance` (in log space).
pub fn positivity_audit(
    records: &[DiagnosticsRecord],
    params: &SchemeParams,
    tolerance: f64,
) -> Result<PositivityAudit> {
    if records.is_empty() {
        return Err(CoreError::InsufficientHistory { need: 1, have: 0 });
    }
    let theta_lo = records.iter().fold(f64::INFINITY, |m, r| m.min(r.theta_min));
    let theta_hi = records
        .iter()
        .fold(f64::NEG_INFINITY, |m, r| m.max(r.theta_max));

    if !(theta_lo > 0.0) {
        return Ok(PositivityAudit {
            lambda_hat: f64::INFINITY,
            lambda_bound: f64::INFINITY,
            theta_min_overall: theta_lo,
            violated: true,
        });
    }

    // The floor rate is anchored at the temperature minimum of the FIRST
    // record: the certified statement is "no faster decay than the
    // Groenwall rate computed from where the history started". Anchoring
    // at the overall observed minimum instead would let the bound grow
    // with any collapse it is supposed to flag.
    let lambda_bound = positivity_rate_bound(params, records[0].theta_min, theta_hi);

    // Least-squares slope of -log theta_min against time.
    let n = records.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for r in records {
        let y = -r.theta_min.ln();
        st += r.t;
        sy += y;
        stt += r.t * r.t;
        sty += r.t * y;
    }
    let denom = n * stt - st * st;
    let lambda_hat = if denom > 0.0 {
        (n * sty - st * sy) / denom
    } else {
        0.0
    };

    let t0 = records[0].t;
    let log0 = records[0].theta_min.ln();
    let violated = records.iter().any(|r| {
        r.theta_min.ln() < log0 - lambda_bound * (r.t - t0) - tolerance
    });

    Ok(PositivityAudit {
        lambda_hat,
        lambda_bound,
        theta_min_overall: theta_lo,
        violated,
    })
}

const CSV_HEADER: [&str; 17] = [
    "t",
    "kinetic",
    "elastic",
    "bulk",
    "thermal_coupling",
    "heat",
    "total_energy",
    "entropy",
    "entropy_production",
    "production_min",
    "theta_min",
    "theta_max",
    "q_eig_min",
    "q_eig_max",
    "res_div_u",
    "res_trace_q",
    "res_energy_drift",
];

fn csv_io(e: csv::Error) -> CoreError {
    CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Writes the diagnostics series as CSV with a fixed column order; values
/// are printed with enough digits to round-trip exactly.
pub fn write_records(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(CSV_HEADER).map_err(csv_io)?;
    for r in records {
        let row = [
            r.t,
            r.kinetic,
            r.elastic,
            r.bulk,
            r.thermal_coupling,
            r.heat,
            r.total_energy,
            r.entropy,
            r.entropy_production,
            r.production_min,
            r.theta_min,
            r.theta_max,
            r.q_eig_min,
            r.q_eig_max,
            r.residuals.div_u,
            r.residuals.trace_q,
            r.residuals.energy_drift,
        ];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        w.write_record(&cells).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a diagnostics series written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_io)?;
    let headers = rd.headers().map_err(csv_io)?.clone();
    if headers.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(CoreError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "diagnostics CSV has unexpected columns",
        )));
    }
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_io)?;
        let mut vals = [0.0_f64; 17];
        if row.len() != 17 {
            return Err(CoreError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "diagnostics CSV row has wrong arity",
            )));
        }
        for (slot, cell) in vals.iter_mut().zip(row.iter()) {
            *slot = cell.parse::<f64>().map_err(|e| {
                CoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?;
        }
        out.push(DiagnosticsRecord {
            t: vals[0],
            kinetic: vals[1],
            elastic: vals[2],
            bulk: vals[3],
            thermal_coupling: vals[4],
            heat: vals[5],
            total_energy: vals[6],
            entropy: vals[7],
            entropy_production: vals[8],
            production_min: vals[9],
            theta_min: vals[10],
            theta_max: vals[11],
            q_eig_min: vals[12],
            q_eig_max: vals[13],
            residuals: Residuals {
                div_u: vals[14],
                trace_q: vals[15],
                energy_drift: vals[16],
            },
        });
    }
    Ok(out)
}
