//! Command-line front end: configured runs, a seeded self-check battery,
//! bulk-potential tabulation, and post-hoc audits of diagnostics series.
//!
//! Exit codes: 0 on success, 1 when the scheme fails (temperature
//! collapse, CFL abort, convergence failure) or an audit finds a
//! violation, 2 on configuration or usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;

use lcflow_core::config::{load_config, RunConfig};
use lcflow_core::error::CoreError;
use lcflow_core::potential::{eval_f, eval_f_moreau, DOMAIN_MARGIN};
use lcflow_core::{diagnostics, dynamics, QTensor, SphereQuadrature};

mod checks;

#[derive(Parser)]
#[command(
    name = "lcflow",
    version,
    about = "Pseudo-spectral solver for non-isothermal Q-tensor liquid crystal hydrodynamics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance a configured run, writing diagnostics and snapshots.
    Run {
        /// Configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Override the configured snapshot cadence (0 = final only).
        #[arg(long = "snapshot-every")]
        snapshot_every: Option<u64>,
    },
    /// Run the seeded self-check battery, one PASS/FAIL line per suite.
    Check {
        /// Seed for the randomized draws.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Tabulate the bulk potential along a uniaxial ray as CSV on stdout.
    PotentialTable {
        /// Number of samples from the isotropic point toward the ray end.
        #[arg(long, default_value_t = 48)]
        samples: usize,
        /// Largest leading eigenvalue tabulated; must stay below 2/3.
        #[arg(long, default_value_t = 0.659)]
        max: f64,
        /// Envelope parameter for the comparison column.
        #[arg(long, default_value_t = 100.0)]
        m: f64,
    },
    /// Audit a diagnostics CSV against the structural bounds.
    Report {
        /// Diagnostics CSV produced by `run`.
        #[arg(long)]
        diagnostics: PathBuf,
        /// Config the run used, for coefficient-derived bounds; defaults
        /// are assumed when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            steps,
            snapshot_every,
        } => cmd_run(&config, steps, snapshot_every),
        Command::Check { seed } => checks::run_battery(seed),
        Command::PotentialTable { samples, max, m } => cmd_potential_table(samples, max, m),
        Command::Report {
            diagnostics,
            config,
        } => cmd_report(&diagnostics, config.as_deref()),
    };
    ExitCode::from(code)
}

fn cmd_run(config_path: &Path, steps: Option<u64>, snapshot_every: Option<u64>) -> u8 {
    let mut cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if let Some(k) = steps {
        cfg.steps = k;
    }
    if let Some(j) = snapshot_every {
        cfg.snapshot_every = j;
    }
    // Everything `build` can fail on (grid bounds, snapshot file) is
    // determined by the configuration, so it belongs to exit code 2.
    let (state, params) = match cfg.build() {
        Ok(sp) => sp,
        Err(e) => {
            eprintln!("initial state construction failed: {e}");
            return 2;
        }
    };
    match drive(state, params, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("run failed: {e}");
            1
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn snapshot_path(prefix: &str, step: u64) -> PathBuf {
    PathBuf::from(format!("{prefix}_{step:06}.snap"))
}

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn drive(
    state: dynamics::State,
    params: dynamics::SchemeParams,
    cfg: &RunConfig,
) -> Result<(), CoreError> {
    ensure_parent(&cfg.diagnostics)?;
    ensure_parent(&snapshot_path(&cfg.snapshot_prefix, 0))?;

    // The stepper invokes the callback on one cadence; diagnostics rows
    // and snapshots each keep their own, so drive the callback at the
    // common divisor and filter.
    let cadence = match (cfg.diag_every, cfg.snapshot_every) {
        (0, j) => j,
        (d, 0) => d,
        (d, j) => gcd(d, j),
    };
    let steps = cfg.steps;
    let mut rows: Vec<diagnostics::DiagnosticsRecord> = Vec::new();
    let result = dynamics::run(state, &params, steps, cadence, |k, st, rec| {
        if k == 0 || k == steps || (cfg.diag_every > 0 && k % cfg.diag_every == 0) {
            rows.push(*rec);
        }
        if cfg.snapshot_every > 0 && k > 0 && k < steps && k % cfg.snapshot_every == 0 {
            st.save(&snapshot_path(&cfg.snapshot_prefix, st.step))?;
        }
        Ok(())
    });

    // Keep whatever diagnostics accumulated, even when the run aborts:
    // the partial series is what a postmortem needs.
    diagnostics::write_records(&cfg.diagnostics, &rows)?;
    let out = result?;
    out.final_state
        .save(&snapshot_path(&cfg.snapshot_prefix, out.final_state.step))?;

    let last = rows.last().expect("a finished run records at least one row");
    println!(
        "completed {} steps to t = {:.6e}: total energy {:.12e} (drift {:.3e}), theta in [{:.6e}, {:.6e}], max CFL {:.3}",
        steps,
        out.final_state.t,
        last.total_energy,
        last.residuals.energy_drift,
        last.theta_min,
        last.theta_max,
        out.max_cfl
    );
    let warnings = out.reports.iter().filter(|r| r.cfl_warning).count();
    if warnings > 0 {
        eprintln!("warning: CFL exceeded the warn threshold on {warnings} steps");
    }
    let unconverged: usize = out.reports.iter().map(|r| r.newton_unconverged).sum();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} potential evaluations stopped at the soft tolerance");
    }
    Ok(())
}

fn cmd_potential_table(samples: usize, max: f64, m: f64) -> u8 {
    if samples < 2 {
        eprintln!("--samples must be at least 2");
        return 2;
    }
    if !(0.0 < max && max < 2.0 / 3.0 - DOMAIN_MARGIN) {
        eprintln!("--max must lie in (0, 2/3); the potential diverges at the boundary");
        return 2;
    }
    if !(m > 0.0 && m.is_finite()) {
        eprintln!("--m must be positive");
        return 2;
    }
    let quad = SphereQuadrature::new(32, 64);
    println!("s,f,f_envelope,dual_max,newton_iters");
    for i in 0..samples {
        let s = max * i as f64 / (samples - 1) as f64;
        let q = QTensor::uniaxial(s, &Vector3::z());
        let exact = match eval_f(&q, &quad) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("potential evaluation failed at s = {s}: {e}");
                return 1;
            }
        };
        let envelope = match eval_f_moreau(&q, m, &quad) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("envelope evaluation failed at s = {s}: {e}");
                return 1;
            }
        };
        let dual_max = exact
            .dual_exponents
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        println!(
            "{s},{},{},{},{}",
            exact.value, envelope.value, dual_max, exact.newton_iters
        );
    }
    0
}

fn cmd_report(diag: &Path, config: Option<&Path>) -> u8 {
    let records = match diagnostics::read_records(diag) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if records.is_empty() {
        eprintln!("diagnostics file holds no records");
        return 2;
    }
    let params = match config {
        Some(p) => match load_config(p) {
            Ok(c) => c.scheme_params(),
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        },
        None => RunConfig::default().scheme_params(),
    };

    let first = &records[0];
    let last = &records[records.len() - 1];
    println!(
        "{} records over t in [{:.6e}, {:.6e}]",
        records.len(),
        first.t,
        last.t
    );
    println!(
        "total energy {:.12e} -> {:.12e} (drift {:.3e})",
        first.total_energy, last.total_energy, last.residuals.energy_drift
    );

    let mut failures = 0;
    let mut verdict = |name: &str, pass: bool, detail: String| {
        if pass {
            println!("PASS {name}: {detail}");
        } else {
            println!("FAIL {name}: {detail}");
            failures += 1;
        }
    };

    let max_div = records.iter().fold(0.0_f64, |m, r| m.max(r.residuals.div_u));
    verdict("incompressibility", max_div <= 1e-10, format!("max |div u| = {max_div:.3e}"));

    let max_tr = records
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.residuals.trace_q));
    verdict("trace-free", max_tr <= 1e-12, format!("max |tr Q| = {max_tr:.3e}"));

    let min_prod = records
        .iter()
        .fold(f64::INFINITY, |m, r| m.min(r.production_min));
    verdict(
        "entropy-production",
        min_prod >= -1e-10,
        format!("min pointwise production = {min_prod:.3e}"),
    );

    match diagnostics::entropy_balance_residual(&records) {
        Ok(res) => println!("entropy balance residual = {res:.3e}"),
        Err(_) => println!("entropy balance residual needs at least two records"),
    }

    match diagnostics::positivity_audit(&records, &params, 1e-6) {
        Ok(audit) => {
            verdict(
                "temperature-positivity",
                !audit.violated,
                format!(
                    "theta_min = {:.6e}, decay rate {:.3e} vs bound {:.3e}",
                    audit.theta_min_overall, audit.lambda_hat, audit.lambda_bound
                ),
            );
        }
        Err(e) => {
            eprintln!("positivity audit failed: {e}");
            return 2;
        }
    }

    if failures == 0 {
        0
    } else {
        1
    }
}
