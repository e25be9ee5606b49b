//! Seeded self-check battery behind `lcflow check`: fast, randomized
//! spot checks of the algebraic identities and numerical layers, printing
//! one PASS/FAIL line per suite.

use nalgebra::Matrix3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use lcflow_core::config::RunConfig;
use lcflow_core::fields::Grid;
use lcflow_core::potential::{eval_f, eval_f_moreau};
use lcflow_core::tensor::{commutator_identity_check, eigenvalues_q, VelGrad};
use lcflow_core::{dynamics, QTensor, SpectralEngine, SphereQuadrature};

/// Runs every suite; returns the process exit code (0 = all passed).
pub fn run_battery(seed: u64) -> u8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites: [(&str, fn(&mut ChaCha8Rng) -> Result<String, String>); 6] = [
        ("tensor-identity", suite_tensor_identity),
        ("potential-origin", suite_potential_origin),
        ("potential-convexity", suite_potential_convexity),
        ("envelope-order", suite_envelope_order),
        ("transforms", suite_transforms),
        ("equilibrium-fixed-point", suite_equilibrium),
    ];
    let mut failures = 0;
    for (name, suite) in suites {
        match suite(&mut rng) {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failures += 1;
            }
        }
    }
    if failures == 0 {
        0
    } else {
        1
    }
}

fn random_q(rng: &mut ChaCha8Rng, scale: f64) -> QTensor {
    QTensor::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// Rejection-samples a tensor whose eigenvalues sit safely inside the
/// domain of the singular potential.
fn random_q_in_domain(rng: &mut ChaCha8Rng) -> QTensor {
    loop {
        let q = random_q(rng, 0.18);
        let ev = eigenvalues_q(&q);
        if ev[2] > -1.0 / 3.0 + 1e-4 && ev[0] < 2.0 / 3.0 - 1e-4 {
            return q;
        }
    }
}

fn random_velgrad(rng: &mut ChaCha8Rng) -> VelGrad {
    let mut m = Matrix3::zeros();
    for v in m.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let tr = m.trace() / 3.0;
    for d in 0..3 {
        m[(d, d)] -= tr;
    }
    VelGrad::new(m)
}

fn suite_tensor_identity(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let h = random_q(rng, 0.8).to_matrix();
        let q = random_q(rng, 0.3);
        let g = random_velgrad(rng);
        let xi = rng.random_range(-1.0..1.0);
        let scale = 1.0 + h.norm() * g.m.norm() * (1.0 + q.norm()).powi(2);
        let rel = commutator_identity_check(&h, &q, &g, xi) / scale;
        worst = worst.max(rel);
    }
    if worst <= 1e-12 {
        Ok(format!("worst relative residual {worst:.3e}"))
    } else {
        Err(format!("relative residual {worst:.3e} exceeds 1e-12"))
    }
}

fn suite_potential_origin(_rng: &mut ChaCha8Rng) -> Result<String, String> {
    let quad = SphereQuadrature::new(32, 64);
    let f0 = eval_f(&QTensor::ZERO, &quad).map_err(|e| e.to_string())?;
    let expected = -(4.0 * std::f64::consts::PI).ln();
    let err = (f0.value - expected).abs();
    if err <= 1e-10 {
        Ok(format!("f(0) matches -log(4 pi) to {err:.3e}"))
    } else {
        Err(format!("f(0) = {} is {err:.3e} from -log(4 pi)", f0.value))
    }
}

fn suite_potential_convexity(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let quad = SphereQuadrature::new(32, 64);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let a = random_q_in_domain(rng);
        let b = random_q_in_domain(rng);
        let mid = (a + b) * 0.5;
        let fa = eval_f(&a, &quad).map_err(|e| e.to_string())?.value;
        let fb = eval_f(&b, &quad).map_err(|e| e.to_string())?.value;
        let fm = eval_f(&mid, &quad).map_err(|e| e.to_string())?.value;
        worst = worst.max(fm - 0.5 * (fa + fb));
    }
    if worst <= 1e-8 {
        Ok(format!("worst midpoint excess {worst:.3e}"))
    } else {
        Err(format!("midpoint excess {worst:.3e} violates convexity"))
    }
}

fn suite_envelope_order(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let quad = SphereQuadrature::new(32, 64);
    for _ in 0..10 {
        let q = random_q_in_domain(rng);
        let f = eval_f(&q, &quad).map_err(|e| e.to_string())?.value;
        let f50 = eval_f_moreau(&q, 50.0, &quad).map_err(|e| e.to_string())?.value;
        let f500 = eval_f_moreau(&q, 500.0, &quad)
            .map_err(|e| e.to_string())?
            .value;
        if !(f50 <= f500 + 1e-10 && f500 <= f + 1e-10) {
            return Err(format!(
                "envelope order broken: f_50 = {f50}, f_500 = {f500}, f = {f}"
            ));
        }
    }
    Ok("f_m increases with m and stays below f".into())
}

fn suite_transforms(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let grid = Grid::new(16, 2).map_err(|e| e.to_string())?;
    let engine = SpectralEngine::new(grid);
    let n = grid.len();

    // Parseval for the unnormalized forward transform.
    let plane: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spec = engine.forward(&plane);
    let phys_sq: f64 = plane.iter().map(|v| v * v).sum();
    let spec_sq: f64 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    let parseval = (phys_sq - spec_sq).abs() / phys_sq;
    if parseval > 1e-11 {
        return Err(format!("Parseval defect {parseval:.3e}"));
    }

    // Leray projection: idempotent, annihilates gradients.
    let mut v = lcflow_core::VectorField::zeros(&grid);
    for comp in v.comps.iter_mut().take(2) {
        for val in comp.iter_mut() {
            *val = rng.random_range(-1.0..1.0);
        }
    }
    let p1 = engine.leray_project(&v);
    let p2 = engine.leray_project(&p1);
    let mut idem = 0.0_f64;
    for c in 0..3 {
        for (a, b) in p1.comps[c].iter().zip(&p2.comps[c]) {
            idem = idem.max((a - b).abs());
        }
    }
    if idem > 1e-13 {
        return Err(format!("projection idempotence defect {idem:.3e}"));
    }

    let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let phi_spec = engine.forward(&phi);
    let mut grad = lcflow_core::VectorField::zeros(&grid);
    for axis in 0..2 {
        grad.comps[axis] = engine.inverse(&engine.deriv_spec(&phi_spec, axis));
    }
    let killed = engine.leray_project(&grad);
    let mut resid = 0.0_f64;
    for c in 0..3 {
        for val in &killed.comps[c] {
            resid = resid.max(val.abs());
        }
    }
    if resid > 1e-12 {
        return Err(format!("gradient annihilation defect {resid:.3e}"));
    }

    Ok(format!(
        "Parseval {parseval:.1e}, idempotence {idem:.1e}, annihilation {resid:.1e}"
    ))
}

fn suite_equilibrium(_rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut cfg = RunConfig::default();
    cfg.steps = 5;
    let (state, params) = cfg.build().map_err(|e| e.to_string())?;
    let out = dynamics::run(state, &params, cfg.steps, 1, |_, _, _| Ok(()))
        .map_err(|e| e.to_string())?;
    let drift = out
        .records
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.residuals.energy_drift));
    if drift <= 1e-12 {
        Ok(format!("energy drift {drift:.3e} over {} steps", cfg.steps))
    } else {
        Err(format!("equilibrium drifted by {drift:.3e}"))
    }
}
