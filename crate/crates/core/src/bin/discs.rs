//! Command-line surface of the disc toolkit: single solves, sweeps,
//! harmonic-measure region reports, Jacobian scans, good-disc density, the
//! end-to-end verification pipeline, and general-case slicing.
//!
//! Exit codes: 0 pass, 1 invariant or bound violation, 2 non-convergence
//! or inconclusive, 3 configuration error.

use bishop_discs::bishop::{
    assemble_disc, attachment_error, center, contraction_certify, solve_bishop, sweep,
    BishopError, DiscParams,
};
use bishop_discs::circle::DiscPoint;
use bishop_discs::config::{ConfigError, ExperimentConfig};
use bishop_discs::geometry::GeometryError;
use bishop_discs::harness::{
    run_general_case, run_good_disc_density, run_thinness_experiment, write_outputs,
    HarnessError,
};
use bishop_discs::jacobians::{
    jac_boundary, jac_s_reduced, scan_full_jacobian, JacobianError,
};
use bishop_discs::potential::{omega_region, ArcInterval, PolarLattice};
use bishop_discs::rng;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_PASS: u8 = 0;
const EXIT_VIOLATION: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "discs", about = "Analytic discs attached to real submanifolds", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the circle grid size (power of two).
    #[arg(long)]
    nodes: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum JacobianMap {
    Full,
    Reduced,
    Boundary,
}

#[derive(Args)]
struct JacobianArgs {
    #[command(flatten)]
    common: Common,
    /// Which non-degeneracy claim to check.
    #[arg(long, value_enum, default_value_t = JacobianMap::Full)]
    map: JacobianMap,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one disc at seeded random parameters in the box.
    Solve(Common),
    /// Solve the lattice family over the parameter box.
    Sweep(Common),
    /// Report the harmonic-measure region Omega.
    Measure(Common),
    /// Scan a Jacobian over the certified box.
    Jacobian(JacobianArgs),
    /// Measure the good-disc fraction against the exceptional set.
    Density(Common),
    /// Run the full verification pipeline.
    Verify(Common),
    /// General case: slice a generic manifold, then verify.
    Slice(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(nodes) = common.nodes {
        cfg.n_nodes = nodes;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn harness_exit(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Config(_) | HarnessError::Io(_) | HarnessError::Json(_) => EXIT_CONFIG,
        HarnessError::CoverageInconclusive { .. }
        | HarnessError::NoGoodDiscs
        | HarnessError::Bishop(_)
        | HarnessError::Jacobian(_) => EXIT_INCONCLUSIVE,
        HarnessError::Potential(_) | HarnessError::Geometry(_) => EXIT_VIOLATION,
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable report"));
}

fn cmd_solve(cfg: &ExperimentConfig) -> Result<u8, HarnessError> {
    let v = cfg.cutoff()?;
    let m = cfg.totally_real_graph()?;
    let mut r = rng::substream(cfg.seed, 0);
    let p = cfg.param_box.sample(&mut r);
    let sol = solve_bishop(&m, &v, &p, cfg.tolerances.solve_tol, cfg.tolerances.max_iter)?;
    let d = assemble_disc(sol, &v);
    let attach = attachment_error(&d, &m, &v);
    let c0 = center(&d);
    let center_err = c0
        .iter()
        .zip(&d.params().c)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    emit(&json!({
        "params": d.params(),
        "iterations": d.solution().iterations,
        "residual": d.solution().residual,
        "attachment_error": attach,
        "center_error": center_err,
    }));
    Ok(if attach <= 1e-10 && center_err <= 1e-11 {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    })
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<u8, HarnessError> {
    let v = cfg.cutoff()?;
    let m = cfg.totally_real_graph()?;
    let result = sweep(
        &m,
        &v,
        &cfg.param_box,
        3,
        cfg.tolerances.solve_tol,
        cfg.tolerances.max_iter,
    );
    let worst_residual = result
        .converged()
        .map(|d| d.solution().residual)
        .fold(0.0f64, f64::max);
    let worst_attach = result
        .converged()
        .map(|d| attachment_error(d, &m, &v))
        .fold(0.0f64, f64::max);
    emit(&json!({
        "discs": result.items.len(),
        "failures": result.failure_count(),
        "worst_residual": worst_residual,
        "worst_attachment_error": worst_attach,
    }));
    if result.failure_count() > 0 {
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(if worst_attach <= 1e-10 { EXIT_PASS } else { EXIT_VIOLATION })
}

fn cmd_measure(cfg: &ExperimentConfig) -> Result<u8, HarnessError> {
    let lattice = PolarLattice::new(cfg.sweep.lattice_radii, cfg.grid());
    let region = omega_region(ArcInterval::gamma(), cfg.tolerances.omega_threshold, lattice)?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("omega.csv"))?;
        region.write_csv(&mut f)?;
    }
    emit(&json!({
        "threshold": region.threshold,
        "region_points": region.points().len(),
        "interior_points": region.interior_points().len(),
        "inradius": region.inradius,
    }));
    Ok(EXIT_PASS)
}

fn cmd_jacobian(cfg: &ExperimentConfig, map: JacobianMap) -> Result<u8, HarnessError> {
    let v = cfg.cutoff()?;
    let m = cfg.totally_real_graph()?;
    let n = m.dim();
    match map {
        JacobianMap::Full => {
            let certified =
                contraction_certify(&m, &v, &cfg.param_box, cfg.tolerances.max_halvings)?;
            let scan = scan_full_jacobian(
                &m,
                &v,
                &certified.param_box,
                cfg.zeta0_point(),
                cfg.sweep.scan_per_axis,
                cfg.tolerances.fd_step,
            )?;
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                let mut f = std::fs::File::create(dir.join("jacobian_scan.csv"))?;
                use std::io::Write;
                writeln!(f, "index,det,richardson_error")?;
                for (i, rep) in scan.reports.iter().enumerate() {
                    writeln!(f, "{i},{:.17e},{:.17e}", rep.det, rep.richardson_error)?;
                }
            }
            emit(&json!({
                "map": "full",
                "certified_box": certified,
                "points": scan.points,
                "min_abs_det": scan.min_abs_det,
                "sign_change": scan.sign_change,
                "max_richardson_error": scan.max_richardson_error,
            }));
            Ok(if scan.sign_change || scan.min_abs_det == 0.0 {
                EXIT_VIOLATION
            } else {
                EXIT_PASS
            })
        }
        JacobianMap::Reduced => {
            let mut t = vec![0.0; n];
            t[n - 1] = cfg.param_box.t_half_widths[n - 1];
            let base = DiscParams::new(vec![0.0; n], t);
            let (a, b) = cfg.gamma0;
            let zeta = DiscPoint::new(1.0 - 1e-3, 0.5 * (a + b)).expect("interior point");
            let rep = jac_s_reduced(&m, &v, &base, zeta, cfg.tolerances.fd_step.max(1e-4))?;
            emit(&json!({
                "map": "reduced",
                "det": rep.report.det,
                "richardson_error": rep.report.richardson_error,
                "upper_block_det": rep.upper_block_det,
                "d33_minor": rep.d33_minor,
                "d33_analytic": rep.d33_analytic,
            }));
            Ok(if rep.report.det.abs() > 0.0 && (rep.d33_minor - rep.d33_analytic).abs() <= 1e-6
            {
                EXIT_PASS
            } else {
                EXIT_VIOLATION
            })
        }
        JacobianMap::Boundary => {
            let mut t = vec![0.0; n];
            t[n - 1] = cfg.param_box.t_half_widths[n - 1];
            let base = DiscParams::new(vec![0.0; n], t.clone());
            let (a, b) = cfg.gamma0;
            let rep = jac_boundary(&m, &v, &base, 0.5 * (a + b), cfg.tolerances.fd_step)?;
            let floor = 0.4 * v.normal_bound() * t[n - 1].abs();
            emit(&json!({
                "map": "boundary",
                "det": rep.det,
                "degenerate_t0": rep.degenerate_t0,
                "floor": floor,
            }));
            Ok(if rep.degenerate_t0 || rep.det.abs() >= floor {
                EXIT_PASS
            } else {
                EXIT_VIOLATION
            })
        }
    }
}

fn cmd_density(cfg: &ExperimentConfig) -> Result<u8, HarnessError> {
    let rep = run_good_disc_density(cfg)?;
    emit(&json!({
        "n_discs": rep.n_discs,
        "solver_failures": rep.solver_failures,
        "good_count": rep.good_count,
        "good_fraction": rep.good_fraction,
        "hit_histogram": rep.hit_histogram,
    }));
    if rep.solver_failures * 10 > rep.n_discs {
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(if rep.good_fraction >= 0.99 { EXIT_PASS } else { EXIT_VIOLATION })
}

fn cmd_verify(cfg: &ExperimentConfig, general: bool) -> Result<u8, HarnessError> {
    let rep = if general {
        run_general_case(cfg)?
    } else {
        run_thinness_experiment(cfg)?
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(&rep, cfg, dir)?;
    }
    emit(&json!({
        "status": rep.status,
        "good_count": rep.good_count,
        "coverage_fraction": rep.coverage.fraction,
        "fixtures": rep.fixtures,
        "slice": rep.slice,
        "wall_seconds": rep.timing.wall_seconds,
    }));
    Ok(if rep.status == "pass" { EXIT_PASS } else { EXIT_VIOLATION })
}

fn dispatch(cmd: &Cmd) -> ExitCode {
    let common = match cmd {
        Cmd::Solve(c)
        | Cmd::Sweep(c)
        | Cmd::Measure(c)
        | Cmd::Density(c)
        | Cmd::Verify(c)
        | Cmd::Slice(c) => c,
        Cmd::Jacobian(j) => &j.common,
    };
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let outcome = match cmd {
        Cmd::Solve(_) => cmd_solve(&cfg),
        Cmd::Sweep(_) => cmd_sweep(&cfg),
        Cmd::Measure(_) => cmd_measure(&cfg),
        Cmd::Jacobian(j) => cmd_jacobian(&cfg, j.map),
        Cmd::Density(_) => cmd_density(&cfg),
        Cmd::Verify(_) => cmd_verify(&cfg, false),
        Cmd::Slice(_) => cmd_verify(&cfg, true),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            // Solver and certification failures are inconclusive rather
            // than violations; config problems are their own code.
            let code = match &e {
                HarnessError::Bishop(BishopError::DimensionMismatch { .. }) => EXIT_CONFIG,
                HarnessError::Geometry(GeometryError::MalformedGraph(_)) => EXIT_CONFIG,
                HarnessError::Jacobian(JacobianError::StepTooLarge { .. }) => EXIT_INCONCLUSIVE,
                other => harness_exit(other),
            };
            fail(code, e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    dispatch(&cli.cmd)
}
