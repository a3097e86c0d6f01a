//! Config-driven experiment pipelines: good-disc density measurement, the
//! end-to-end thinness experiment (region construction, disc sweep, fixture
//! propagation, coverage, consistency), and the general-case slicing run.
//! All stochastic draws derive from the config seed through per-task
//! substreams, so reports are reproducible bit for bit.

use crate::bishop::{
    assemble_disc, contraction_certify, solve_bishop, AnalyticDisc, BishopError, CertifiedBox,
    DiscParams,
};
use crate::circle::CircleGrid;
use crate::config::{ConfigError, ExperimentConfig, ManifoldConfig};
use crate::geometry::{
    sample_good_b, slice, CutoffV, ExceptionalSet, GeometryError, TotallyRealGraph,
};
use crate::jacobians::{
    open_image_check, scan_full_jacobian, CoverageReport, JacobianError, ScanSummary,
};
use crate::potential::{
    good_disc, omega_region, two_constants_check, ArcInterval, HarmonicMeasure, LatticeField,
    PolarLattice, PotentialError, PshTestFn,
};
use crate::rng;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bishop(#[from] BishopError),
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("coverage inconclusive: attained fraction {fraction:.5} below floor {floor:.5}")]
    CoverageInconclusive { fraction: f64, floor: f64 },
    #[error("no good discs found; fixture propagation impossible")]
    NoGoodDiscs,
}

/// Substream indices reserved for the non-sweep stages, far above any
/// per-disc task index.
const STREAM_COVERAGE: u64 = 1 << 40;
const STREAM_BALL: u64 = (1 << 40) + 1;
const STREAM_SLICE: u64 = (1 << 40) + 2;

/// Outcome for one swept disc.
#[derive(Debug, Clone, Serialize)]
pub struct DiscRecord {
    pub params: DiscParams,
    pub converged: bool,
    pub error: Option<String>,
    pub residual: Option<f64>,
    pub good: Option<bool>,
    pub hits: Option<usize>,
}

/// Report of the good-disc density measurement.
#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub n_discs: usize,
    pub solver_failures: usize,
    pub good_count: usize,
    pub good_fraction: f64,
    /// Histogram of near-zero hit counts; the last bucket collects
    /// everything at or above the hit cap.
    pub hit_histogram: Vec<usize>,
    pub records: Vec<DiscRecord>,
}

struct SolvedSweep {
    records: Vec<DiscRecord>,
    discs: Vec<(usize, AnalyticDisc)>,
}

fn sweep_random(
    cfg: &ExperimentConfig,
    m: &TotallyRealGraph,
    v: &CutoffV,
    set: &ExceptionalSet,
    n_discs: usize,
) -> SolvedSweep {
    let tol = cfg.tolerances.solve_tol;
    let max_iter = cfg.tolerances.max_iter;
    let hit_cap = cfg.tolerances.hit_cap;
    let solved: Vec<(DiscRecord, Option<AnalyticDisc>)> = (0..n_discs)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(cfg.seed, i as u64);
            let p = cfg.param_box.sample(&mut r);
            match solve_bishop(m, v, &p, tol, max_iter) {
                Ok(sol) => {
                    let residual = sol.residual;
                    let d = assemble_disc(sol, v);
                    let rep = good_disc(&d, set, hit_cap);
                    (
                        DiscRecord {
                            params: p,
                            converged: true,
                            error: None,
                            residual: Some(residual),
                            good: Some(rep.is_good),
                            hits: Some(rep.hits),
                        },
                        Some(d),
                    )
                }
                Err(e) => (
                    DiscRecord {
                        params: p,
                        converged: false,
                        error: Some(e.to_string()),
                        residual: None,
                        good: None,
                        hits: None,
                    },
                    None,
                ),
            }
        })
        .collect();
    let mut records = Vec::with_capacity(n_discs);
    let mut discs = Vec::new();
    for (i, (rec, disc)) in solved.into_iter().enumerate() {
        if let (Some(true), Some(d)) = (rec.good, disc) {
            discs.push((i, d));
        }
        records.push(rec);
    }
    SolvedSweep { records, discs }
}

/// Sample seeded random parameters in the box, solve, and classify each
/// disc against the exceptional set.
pub fn run_good_disc_density(cfg: &ExperimentConfig) -> Result<DensityReport, HarnessError> {
    cfg.validate()?;
    let v = cfg.cutoff()?;
    let m = resolve_graph(cfg)?.0;
    let set = resolve_exceptional(cfg)?;
    let n = cfg.sweep.density_discs;
    let swept = sweep_random(cfg, &m, &v, &set, n);
    let cap = cfg.tolerances.hit_cap;
    let mut histogram = vec![0usize; cap + 2];
    let mut failures = 0usize;
    let mut good = 0usize;
    for rec in &swept.records {
        if !rec.converged {
            failures += 1;
            continue;
        }
        if rec.good == Some(true) {
            good += 1;
        }
        let h = rec.hits.unwrap_or(0).min(cap + 1);
        histogram[h] += 1;
    }
    let classified = n - failures;
    Ok(DensityReport {
        n_discs: n,
        solver_failures: failures,
        good_count: good,
        good_fraction: if classified > 0 {
            good as f64 / classified as f64
        } else {
            0.0
        },
        hit_histogram: histogram,
        records: swept.records,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OmegaStats {
    pub threshold: f64,
    pub lattice_points: usize,
    pub region_points: usize,
    pub inradius: f64,
}

/// Per-fixture outcome of the propagation pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureOutcome {
    pub name: String,
    /// Measured max of V over arc images, across checked discs.
    pub k_arc: f64,
    /// Measured global max of the compositions.
    pub k_global: f64,
    /// k + (K - k) * threshold: the two-constants bound over the region.
    pub propagated_bound: f64,
    pub worst_two_constants_margin: f64,
    /// Max of V over region samples of the disc images (the W' proxy).
    pub max_over_region_samples: f64,
    pub ball_average_at_zero: f64,
    pub discs_checked: usize,
    pub two_constants_passed: bool,
    /// Ball average consistent with the propagated bound (step 3
    /// sub-mean propagation).
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub b_matrix: Vec<Vec<f64>>,
    pub b_norm: f64,
    pub change_deviation_from_identity: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Full report of the end-to-end thinness experiment. Everything except
/// `timing` is a pure function of (config, seed).
#[derive(Debug, Clone, Serialize)]
pub struct ThinnessReport {
    pub status: String,
    pub seed: u64,
    pub certified_box: CertifiedBox,
    pub omega: OmegaStats,
    pub good_count: usize,
    pub records: Vec<DiscRecord>,
    pub fixtures: Vec<FixtureOutcome>,
    pub coverage: CoverageReport,
    pub jacobian_scan: ScanSummary,
    pub slice: Option<SliceSummary>,
    pub timing: Timing,
}

fn resolve_graph(
    cfg: &ExperimentConfig,
) -> Result<(TotallyRealGraph, Option<SliceSummary>), HarnessError> {
    match &cfg.manifold {
        ManifoldConfig::TotallyReal { .. } => Ok((cfg.totally_real_graph()?, None)),
        ManifoldConfig::Generic {
            slice_norm_bound,
            slice_attempts,
            ..
        } => {
            let g = cfg.generic_graph()?;
            let set = cfg.exceptional_set()?;
            let mut r = rng::substream(cfg.seed, STREAM_SLICE);
            let b = sample_good_b(&g, &set, &mut r, *slice_norm_bound, *slice_attempts)?;
            let normalized = slice(&g, &b, *slice_norm_bound)?;
            let rows = (0..b.matrix().nrows())
                .map(|i| {
                    (0..b.matrix().ncols())
                        .map(|j| b.matrix()[(i, j)])
                        .collect()
                })
                .collect();
            let summary = SliceSummary {
                b_matrix: rows,
                b_norm: b.norm(),
                change_deviation_from_identity: normalized.change.deviation_from_identity(),
            };
            Ok((normalized.graph, Some(summary)))
        }
    }
}

/// Exceptional set in the coordinates of the solved graph: restricted to
/// the slice when the config is generic.
fn resolve_exceptional(cfg: &ExperimentConfig) -> Result<ExceptionalSet, HarnessError> {
    let set = cfg.exceptional_set()?;
    match &cfg.manifold {
        ManifoldConfig::TotallyReal { .. } => Ok(set),
        ManifoldConfig::Generic {
            slice_norm_bound,
            slice_attempts,
            ..
        } => {
            if set.is_empty() {
                return Ok(set);
            }
            let g = cfg.generic_graph()?;
            let mut r = rng::substream(cfg.seed, STREAM_SLICE);
            let b = sample_good_b(&g, &set, &mut r, *slice_norm_bound, *slice_attempts)?;
            Ok(set.sliced(&b, g.ambient())?)
        }
    }
}

/// Mean of V over seeded samples of the complex ball of radius `radius`
/// around the origin.
fn ball_average(v: &PshTestFn, dim: usize, radius: f64, samples: usize, seed: u64) -> f64 {
    let mut r = rng::substream(seed, STREAM_BALL);
    let mut sum = 0.0;
    let mut count = 0usize;
    while count < samples {
        let z: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)))
            .collect();
        if z.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1.0 {
            continue;
        }
        sum += v.eval(&z.iter().map(|c| c * radius).collect::<Vec<_>>());
        count += 1;
    }
    sum / samples as f64
}

/// One disc's image on the composition lattice, cached so every fixture can
/// be propagated without re-evaluating the disc.
struct DiscImage {
    points: Vec<Vec<Vec<Complex64>>>,
    max_norm: f64,
}

fn disc_images(discs: &[(usize, AnalyticDisc)], lattice: &PolarLattice) -> Vec<DiscImage> {
    discs
        .par_iter()
        .map(|(_, d)| {
            let mut max_norm = 0.0f64;
            let points = (0..lattice.radii().len())
                .map(|i| {
                    (0..lattice.grid().n_nodes())
                        .map(|j| {
                            let z = d.eval(lattice.point(i, j));
                            let norm =
                                z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                            max_norm = max_norm.max(norm);
                            z
                        })
                        .collect()
                })
                .collect();
            DiscImage { points, max_norm }
        })
        .collect()
}

fn propagate_fixture(
    cfg: &ExperimentConfig,
    fixture: &PshTestFn,
    images: &[DiscImage],
    lattice: &PolarLattice,
) -> Result<FixtureOutcome, HarnessError> {
    let arc = ArcInterval::gamma();
    let threshold = cfg.tolerances.omega_threshold;
    let tol = cfg.tolerances.bound_tol;
    let comp_grid = lattice.grid();
    let checked = images.len();
    let omega = HarmonicMeasure::new(arc);
    let mut k_arc = f64::NEG_INFINITY;
    let mut k_global = f64::NEG_INFINITY;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut max_region = f64::NEG_INFINITY;
    let mut all_passed = true;
    for image in images {
        if image.max_norm > fixture.validity_radius {
            return Err(HarnessError::Potential(PotentialError::RangeEscape {
                norm: image.max_norm,
                radius: fixture.validity_radius,
            }));
        }
        let values = image
            .points
            .iter()
            .map(|row| row.iter().map(|z| fixture.eval(z)).collect())
            .collect();
        let u = &LatticeField::from_rows(lattice.clone(), values);
        let mut k = f64::NEG_INFINITY;
        for (j, &val) in u.boundary_row().iter().enumerate() {
            if arc.contains(comp_grid.node_angle(j)) {
                k = k.max(val);
            }
        }
        let big_k = u.max();
        let rep = two_constants_check(u, arc, k, big_k, tol)?;
        all_passed &= rep.passed;
        worst_margin = worst_margin.max(rep.worst_margin);
        k_arc = k_arc.max(k);
        k_global = k_global.max(big_k);
        // Max of V over the disc's region samples: the W' proxy.
        for i in 0..u.lattice().radii().len() {
            for j in 0..comp_grid.n_nodes() {
                let p = u.lattice().point(i, j);
                if 1.0 + omega.eval(p) < threshold {
                    max_region = max_region.max(u.value(i, j));
                }
            }
        }
    }
    let propagated_bound = k_arc + (k_global - k_arc) * threshold;
    let avg = ball_average(
        fixture,
        cfg.dim(),
        cfg.sweep.probe_radius,
        cfg.sweep.ball_samples,
        cfg.seed,
    );
    let consistent = avg <= propagated_bound + cfg.tolerances.consistency_tol;
    Ok(FixtureOutcome {
        name: fixture.name.clone(),
        k_arc,
        k_global,
        propagated_bound,
        worst_two_constants_margin: worst_margin,
        max_over_region_samples: max_region,
        ball_average_at_zero: avg,
        discs_checked: checked,
        two_constants_passed: all_passed,
        consistent,
    })
}

/// The proof pipeline at desk scale: region, sweep, fixture propagation,
/// Jacobian scan, coverage, and the sub-mean consistency check.
pub fn run_thinness_experiment(cfg: &ExperimentConfig) -> Result<ThinnessReport, HarnessError> {
    let start = Instant::now();
    cfg.validate()?;
    let v = cfg.cutoff()?;
    let (m, slice_summary) = resolve_graph(cfg)?;
    let set = resolve_exceptional(cfg)?;
    let grid = cfg.grid();

    let certified = contraction_certify(&m, &v, &cfg.param_box, cfg.tolerances.max_halvings)?;

    let region = omega_region(
        ArcInterval::gamma(),
        cfg.tolerances.omega_threshold,
        PolarLattice::new(cfg.sweep.lattice_radii, grid),
    )?;
    let omega_stats = OmegaStats {
        threshold: region.threshold,
        lattice_points: cfg.sweep.lattice_radii * grid.n_nodes(),
        region_points: region.points().len(),
        inradius: region.inradius,
    };

    let swept = sweep_random(cfg, &m, &v, &set, cfg.sweep.n_discs);
    let good_count = swept.discs.len();

    let fixtures = cfg.psh_fixtures()?;
    if !fixtures.is_empty() && good_count == 0 {
        return Err(HarnessError::NoGoodDiscs);
    }
    // Coarse composition lattice: the closed-form harmonic measure makes
    // the estimate resolution-independent, so the lattice only needs to
    // sample the composition, not resolve it.
    let comp_grid = CircleGrid::new(grid.n_nodes().min(64)).expect("power of two");
    let comp_lattice = PolarLattice::new(17, comp_grid);
    let checked = swept.discs.len().min(100);
    let images = disc_images(&swept.discs[..checked], &comp_lattice);
    let fixture_outcomes = fixtures
        .iter()
        .map(|f| propagate_fixture(cfg, f, &images, &comp_lattice))
        .collect::<Result<Vec<_>, _>>()?;

    let zeta0 = cfg.zeta0_point();
    let scan = scan_full_jacobian(
        &m,
        &v,
        &certified.param_box,
        zeta0,
        cfg.sweep.scan_per_axis,
        cfg.tolerances.fd_step,
    )?;

    let mut coverage_rng = rng::substream(cfg.seed, STREAM_COVERAGE);
    let coverage = open_image_check(
        &m,
        &v,
        &certified.param_box,
        zeta0,
        cfg.sweep.probe_radius,
        cfg.sweep.n_targets,
        &mut coverage_rng,
    )?;
    if coverage.fraction < cfg.tolerances.coverage_floor {
        return Err(HarnessError::CoverageInconclusive {
            fraction: coverage.fraction,
            floor: cfg.tolerances.coverage_floor,
        });
    }

    let pass = !scan.sign_change
        && scan.min_abs_det > 0.0
        && fixture_outcomes
            .iter()
            .all(|f| f.two_constants_passed && f.consistent);
    Ok(ThinnessReport {
        status: if pass { "pass" } else { "fail" }.into(),
        seed: cfg.seed,
        certified_box: certified,
        omega: omega_stats,
        good_count,
        records: swept.records,
        fixtures: fixture_outcomes,
        coverage,
        jacobian_scan: scan,
        slice: slice_summary,
        timing: Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// General case m >= n: slice a generic graph down to a totally real one
/// and run the thinness pipeline on the slice. For m = n this delegates
/// to [`run_thinness_experiment`] unchanged.
pub fn run_general_case(cfg: &ExperimentConfig) -> Result<ThinnessReport, HarnessError> {
    // resolve_graph handles both cases; the distinction is only which
    // manifold kind the config declares.
    run_thinness_experiment(cfg)
}

/// Serialize a report with the timing field zeroed, for determinism
/// comparisons.
pub fn deterministic_json(report: &ThinnessReport) -> Result<String, HarnessError> {
    let mut value = serde_json::to_value(report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("timing");
    }
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Write the full output bundle: report.json, per-disc traces, the omega
/// region mask, and the Jacobian scan table.
pub fn write_outputs(
    report: &ThinnessReport,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f)?;

    let region = omega_region(
        ArcInterval::gamma(),
        cfg.tolerances.omega_threshold,
        PolarLattice::new(cfg.sweep.lattice_radii.min(64), cfg.grid()),
    )?;
    let mut f = std::fs::File::create(out_dir.join("omega.csv"))?;
    region.write_csv(&mut f)?;

    let mut f = std::fs::File::create(out_dir.join("jacobian_scan.csv"))?;
    writeln!(f, "index,det,richardson_error")?;
    for (i, rep) in report.jacobian_scan.reports.iter().enumerate() {
        writeln!(f, "{i},{:.17e},{:.17e}", rep.det, rep.richardson_error)?;
    }

    let disc_dir = out_dir.join("discs");
    std::fs::create_dir_all(&disc_dir)?;
    let v = cfg.cutoff()?;
    let (m, _) = resolve_graph(cfg)?;
    for (i, rec) in report.records.iter().take(16).enumerate() {
        if !rec.converged {
            continue;
        }
        let sol = solve_bishop(
            &m,
            &v,
            &rec.params,
            cfg.tolerances.solve_tol,
            cfg.tolerances.max_iter,
        )?;
        let d = assemble_disc(sol, &v);
        let mut f = std::fs::File::create(disc_dir.join(format!("disc_{i:03}.csv")))?;
        write_disc_csv(&d, &mut f)?;
    }
    Ok(())
}

fn write_disc_csv<W: Write>(d: &AnalyticDisc, w: &mut W) -> Result<(), HarnessError> {
    let grid = d.grid();
    let dim = d.x_trace().dim();
    let mut header = String::from("theta");
    for k in 0..dim {
        header.push_str(&format!(",x{0},y{0}", k + 1));
    }
    writeln!(w, "{header}")?;
    for j in 0..grid.n_nodes() {
        let mut line = format!("{:.17e}", grid.node_angle(j));
        for k in 0..dim {
            line.push_str(&format!(
                ",{:.17e},{:.17e}",
                d.x_trace().value(k, j),
                d.w_trace().value(k, j)
            ));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
