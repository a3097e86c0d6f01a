//! Finite-difference verification of the three non-degeneracy claims: the
//! full parameter map S(c, t) at an interior point, the reduced map in
//! ('c, 't, zeta) near the arc, and the boundary minor in ('c, tau), plus
//! the tangential-derivative bounds along gamma0.
//!
//! All derivatives in disc parameters are central finite differences with
//! step-halving Richardson control; each perturbed evaluation re-solves the
//! Bishop equation, so these checks are independent of the solver's own
//! linearization and double as an empirical C^1-dependence test.

use crate::bishop::{
    assemble_disc, solve_bishop, AnalyticDisc, BishopError, DiscParams, ParamBox,
};
use crate::circle::{d_tau, DiscPoint, FourierCoeffs};
use crate::geometry::{CutoffV, TotallyRealGraph};
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Default finite-difference step, scaled per parameter by magnitude.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Solver tolerance used inside Jacobian evaluations; tight so that the
/// solver noise floor stays below the second-difference truncation error.
const SOLVE_TOL: f64 = 1e-13;
const SOLVE_MAX_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error(
        "finite-difference step too large: Richardson estimate {estimate:.3e} \
         exceeds 10% of |det| = {det:.3e}"
    )]
    StepTooLarge { estimate: f64, det: f64 },
    #[error(transparent)]
    Bishop(#[from] BishopError),
    #[error("evaluation point left the closed disc")]
    OutsideDisc,
}

/// One finite-difference Jacobian with its determinant and error control.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianReport {
    pub map: String,
    /// Packed parameter vector at which the matrix was taken.
    pub point: Vec<f64>,
    /// Row i = derivative with respect to parameter i (half-step matrix).
    pub matrix: Vec<Vec<f64>>,
    /// Richardson-extrapolated determinant.
    pub det: f64,
    pub step: f64,
    pub richardson_error: f64,
    /// Set by the boundary minor when t = 0: the constant-disc case where
    /// the minor vanishes identically.
    pub degenerate_t0: bool,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Central-difference Jacobian of `f` at `p`; rows are parameters. Each
/// step is scaled by max(1, |p_i|).
fn fd_matrix<F>(f: &F, p: &[f64], step: f64) -> Result<DMatrix<f64>, JacobianError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, JacobianError>,
{
    let base = f(p)?;
    let dim_out = base.len();
    let mut m = DMatrix::zeros(p.len(), dim_out);
    for i in 0..p.len() {
        let h = step * p[i].abs().max(1.0);
        let mut plus = p.to_vec();
        plus[i] += h;
        let mut minus = p.to_vec();
        minus[i] -= h;
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        for j in 0..dim_out {
            m[(i, j)] = (fp[j] - fm[j]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Determinant via FD at steps h and h/2, Richardson extrapolated:
/// det = (4 d_{h/2} - d_h)/3 with error estimate |d_{h/2} - d_h|/3.
fn fd_det_richardson<F>(
    f: &F,
    p: &[f64],
    step: f64,
) -> Result<(DMatrix<f64>, f64, f64), JacobianError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, JacobianError>,
{
    let coarse = fd_matrix(f, p, step)?;
    let fine = fd_matrix(f, p, step / 2.0)?;
    let d_h = coarse.determinant();
    let d_h2 = fine.determinant();
    let det = (4.0 * d_h2 - d_h) / 3.0;
    let err = (d_h2 - d_h).abs() / 3.0;
    Ok((fine, det, err))
}

fn check_step(det: f64, err: f64) -> Result<(), JacobianError> {
    if err > 0.1 * det.abs() {
        return Err(JacobianError::StepTooLarge { estimate: err, det });
    }
    Ok(())
}

fn solve_at(
    m: &TotallyRealGraph,
    v: &CutoffV,
    p: &DiscParams,
) -> Result<AnalyticDisc, JacobianError> {
    let sol = solve_bishop(m, v, p, SOLVE_TOL, SOLVE_MAX_ITER)?;
    Ok(assemble_disc(sol, v))
}

fn unpack_params(packed: &[f64], n: usize) -> DiscParams {
    DiscParams::new(packed[..n].to_vec(), packed[n..].to_vec())
}

/// Jacobian of the full map S: (c, t) -> (Re Phi, Im Phi)(zeta0) in all 2n
/// parameters. At t = 0 the determinant equals v_ext(zeta0)^n.
pub fn jac_s_full(
    m: &TotallyRealGraph,
    v: &CutoffV,
    p: &DiscParams,
    zeta0: DiscPoint,
    step: f64,
) -> Result<JacobianReport, JacobianError> {
    let n = m.dim();
    let f = |packed: &[f64]| -> Result<Vec<f64>, JacobianError> {
        let disc = solve_at(m, v, &unpack_params(packed, n))?;
        let z = disc.eval(zeta0);
        let mut out: Vec<f64> = z.iter().map(|c| c.re).collect();
        out.extend(z.iter().map(|c| c.im));
        Ok(out)
    };
    let mut packed = p.c.clone();
    packed.extend_from_slice(&p.t);
    let (matrix, det, err) = fd_det_richardson(&f, &packed, step)?;
    check_step(det, err)?;
    Ok(JacobianReport {
        map: "S_full".into(),
        point: packed,
        matrix: matrix_rows(&matrix),
        det,
        step,
        richardson_error: err,
        degenerate_t0: false,
    })
}

/// Lattice scan of the full Jacobian over a parameter box.
#[derive(Debug, Clone, Serialize)]
pub struct ScanSummary {
    pub points: usize,
    pub min_abs_det: f64,
    pub sign_change: bool,
    pub max_richardson_error: f64,
    pub reports: Vec<JacobianReport>,
}

pub fn scan_full_jacobian(
    m: &TotallyRealGraph,
    v: &CutoffV,
    q: &ParamBox,
    zeta0: DiscPoint,
    per_axis: usize,
    step: f64,
) -> Result<ScanSummary, JacobianError> {
    let reports: Vec<JacobianReport> = q
        .lattice(per_axis)
        .par_iter()
        .map(|p| jac_s_full(m, v, p, zeta0, step))
        .collect::<Result<_, _>>()?;
    let min_abs_det = reports.iter().map(|r| r.det.abs()).fold(f64::INFINITY, f64::min);
    let sign_change = reports.iter().any(|r| r.det > 0.0)
        && reports.iter().any(|r| r.det < 0.0);
    let max_err = reports
        .iter()
        .map(|r| r.richardson_error)
        .fold(0.0f64, f64::max);
    Ok(ScanSummary {
        points: reports.len(),
        min_abs_det,
        sign_change,
        max_richardson_error: max_err,
        reports,
    })
}

/// Outcome of the local-openness probe around S(box center).
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub probes: usize,
    pub attained: usize,
    pub inversion_failures: usize,
    pub fraction: f64,
    pub probe_radius: f64,
}

/// Verify that targets in a small ball around S(center) are attained by
/// parameters in Q, via chord Newton with the center Jacobian. Per-probe
/// inversion failures are counted, not fatal.
pub fn open_image_check<R: Rng>(
    m: &TotallyRealGraph,
    v: &CutoffV,
    q: &ParamBox,
    zeta0: DiscPoint,
    probe_radius: f64,
    n_probes: usize,
    rng: &mut R,
) -> Result<CoverageReport, JacobianError> {
    let n = m.dim();
    let center = q.center();
    let eval = |packed: &[f64]| -> Result<Vec<f64>, JacobianError> {
        let disc = solve_at(m, v, &unpack_params(packed, n))?;
        let z = disc.eval(zeta0);
        let mut out: Vec<f64> = z.iter().map(|c| c.re).collect();
        out.extend(z.iter().map(|c| c.im));
        Ok(out)
    };
    let mut packed0 = center.c.clone();
    packed0.extend_from_slice(&center.t);
    let base = eval(&packed0)?;
    // Chord Newton: one Jacobian at the center, reused for every probe.
    // Rows of fd_matrix are parameters, so the linear model is
    // S(p) - S(p0) ~ J^T (p - p0).
    let jac = fd_matrix(&eval, &packed0, DEFAULT_FD_STEP)?.transpose();
    let lu = jac.lu();
    let targets: Vec<Vec<f64>> = (0..n_probes)
        .map(|_| {
            // Uniform in the ball by rejection from the cube.
            loop {
                let d: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if d.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    return base
                        .iter()
                        .zip(d)
                        .map(|(b, x)| b + probe_radius * x)
                        .collect();
                }
            }
        })
        .collect();
    let hits: Vec<bool> = targets
        .par_iter()
        .map(|target| {
            let mut p = packed0.clone();
            let mut converged = false;
            for _ in 0..40 {
                let value = match eval(&p) {
                    Ok(val) => val,
                    Err(_) => break,
                };
                let residual = nalgebra::DVector::from_iterator(
                    2 * n,
                    target.iter().zip(&value).map(|(t, s)| t - s),
                );
                if residual.norm() <= 1e-10 {
                    converged = true;
                    break;
                }
                let Some(delta) = lu.solve(&residual) else {
                    break;
                };
                for (pi, di) in p.iter_mut().zip(delta.iter()) {
                    *pi += di;
                }
            }
            converged && q.contains(&unpack_params(&p, n))
        })
        .collect();
    let attained = hits.iter().filter(|&&h| h).count();
    let failures = n_probes - attained;
    Ok(CoverageReport {
        probes: n_probes,
        attained,
        inversion_failures: failures,
        fraction: attained as f64 / n_probes.max(1) as f64,
        probe_radius,
    })
}

/// Reduced Jacobian report: the (2n)x(2n) determinant in ('c, 't, zeta)
/// with the lower-right 2x2 minor checked two independent ways.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedJacobianReport {
    pub report: JacobianReport,
    /// Determinant of the leading (2n-2)x(2n-2) block in ('c, 't).
    pub upper_block_det: f64,
    /// The 2x2 zeta-minor from finite differences.
    pub d33_minor: f64,
    /// The same minor as |d Phi_n / d zeta|^2 of the holomorphic form.
    pub d33_analytic: f64,
}

/// Jacobian of the reduced map ('c, 't, zeta', zeta'') ->
/// (x', y', x_n, y_n) with (c_n, t_n) frozen at their values in `base`.
pub fn jac_s_reduced(
    m: &TotallyRealGraph,
    v: &CutoffV,
    base: &DiscParams,
    zeta: DiscPoint,
    step: f64,
) -> Result<ReducedJacobianReport, JacobianError> {
    let n = m.dim();
    assert!(n >= 2, "reduced map needs n >= 2");
    let (c_n, t_n) = (base.c[n - 1], base.t[n - 1]);
    let f = |packed: &[f64]| -> Result<Vec<f64>, JacobianError> {
        let mut c = packed[..n - 1].to_vec();
        c.push(c_n);
        let mut t = packed[n - 1..2 * n - 2].to_vec();
        t.push(t_n);
        let point = DiscPoint::from_cartesian(packed[2 * n - 2], packed[2 * n - 1])
            .map_err(|_| JacobianError::OutsideDisc)?;
        let disc = solve_at(m, v, &DiscParams::new(c, t))?;
        let z = disc.eval(point);
        let mut out: Vec<f64> = z[..n - 1].iter().map(|w| w.re).collect();
        out.extend(z[..n - 1].iter().map(|w| w.im));
        out.push(z[n - 1].re);
        out.push(z[n - 1].im);
        Ok(out)
    };
    let (zx, zy) = zeta.to_cartesian();
    let mut packed: Vec<f64> = base.c[..n - 1].to_vec();
    packed.extend_from_slice(&base.t[..n - 1]);
    packed.push(zx);
    packed.push(zy);
    let (matrix, det, err) = fd_det_richardson(&f, &packed, step)?;
    check_step(det, err)?;
    let k = 2 * n - 2;
    let upper_block_det = matrix.view((0, 0), (k, k)).clone_owned().determinant();
    let d33_minor = matrix.view((k, k), (2, 2)).clone_owned().determinant();
    let disc = solve_at(m, v, base)?;
    let dz = disc.derivative_holomorphic(num_complex::Complex64::new(zx, zy));
    let d33_analytic = dz[n - 1].norm_sqr();
    Ok(ReducedJacobianReport {
        report: JacobianReport {
            map: "S_reduced".into(),
            point: packed,
            matrix: matrix_rows(&matrix),
            det,
            step,
            richardson_error: err,
            degenerate_t0: false,
        },
        upper_block_det,
        d33_minor,
        d33_analytic,
    })
}

/// Boundary minor: the n x n determinant of ('c, tau) -> X('c, c_n, 't,
/// t_n, tau), finite differences in 'c and the spectral tangential
/// derivative in tau. At t = 0 the disc is constant, the tau row vanishes
/// identically, and the report is flagged degenerate instead of erroring.
pub fn jac_boundary(
    m: &TotallyRealGraph,
    v: &CutoffV,
    base: &DiscParams,
    tau: f64,
    step: f64,
) -> Result<JacobianReport, JacobianError> {
    let n = m.dim();
    let degenerate = base.t_norm() == 0.0;
    let x_at = |p: &DiscParams| -> Result<Vec<f64>, JacobianError> {
        let disc = solve_at(m, v, p)?;
        Ok(disc
            .x_coeffs()
            .harmonic_eval(DiscPoint { r: 1.0, theta: tau }))
    };
    let build = |h_scale: f64| -> Result<DMatrix<f64>, JacobianError> {
        let mut matrix = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            let h = h_scale * base.c[i].abs().max(1.0);
            let mut plus = base.clone();
            plus.c[i] += h;
            let mut minus = base.clone();
            minus.c[i] -= h;
            let fp = x_at(&plus)?;
            let fm = x_at(&minus)?;
            for j in 0..n {
                matrix[(i, j)] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
        let disc = solve_at(m, v, base)?;
        let dtau_x = FourierCoeffs::of(&d_tau(disc.x_trace()))
            .harmonic_eval(DiscPoint { r: 1.0, theta: tau });
        for j in 0..n {
            matrix[(n - 1, j)] = dtau_x[j];
        }
        Ok(matrix)
    };
    let coarse = build(step)?;
    let fine = build(step / 2.0)?;
    let d_h = coarse.determinant();
    let d_h2 = fine.determinant();
    let det = (4.0 * d_h2 - d_h) / 3.0;
    let err = (d_h2 - d_h).abs() / 3.0;
    if !degenerate {
        check_step(det, err)?;
    }
    Ok(JacobianReport {
        map: "boundary_minor".into(),
        point: {
            let mut p = base.c.clone();
            p.extend_from_slice(&base.t);
            p.push(tau);
            p
        },
        matrix: matrix_rows(&fine),
        det,
        step,
        richardson_error: err,
        degenerate_t0: degenerate,
    })
}

/// Tangential-derivative bounds of one disc on gamma0.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeBoundReport {
    /// sup over gamma0 nodes of |D_tau X_k|, per component.
    pub sup_components: Vec<f64>,
    /// sup over gamma0 nodes of the max-norm of D_tau X.
    pub sup_norm: f64,
    /// sup_norm / ||t||.
    pub fitted_c: f64,
    /// min over gamma0 nodes and components of
    /// |D_tau X_k| - (|t_k| b - ||t|| b / 2); nonnegative iff the
    /// componentwise lower bound holds.
    pub lower_margin: f64,
    pub b: f64,
    pub t: Vec<f64>,
}

pub fn dtau_bounds_single(disc: &AnalyticDisc, v: &CutoffV) -> DerivativeBoundReport {
    let d = d_tau(disc.x_trace());
    let nodes = v.gamma0_nodes();
    let b = v.normal_bound();
    let t = disc.params().t.clone();
    let t_norm = disc.params().t_norm();
    let n = d.dim();
    let mut sup_components = vec![0.0f64; n];
    let mut lower_margin = f64::INFINITY;
    for &j in &nodes {
        for k in 0..n {
            let val = d.value(k, j).abs();
            sup_components[k] = sup_components[k].max(val);
            lower_margin = lower_margin.min(val - (t[k].abs() * b - t_norm * b / 2.0));
        }
    }
    let sup_norm = sup_components.iter().fold(0.0f64, |a, &x| a.max(x));
    DerivativeBoundReport {
        sup_components,
        sup_norm,
        fitted_c: if t_norm > 0.0 { sup_norm / t_norm } else { 0.0 },
        lower_margin,
        b,
        t,
    }
}

/// Family aggregate of the tangential-derivative bounds.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyBoundReport {
    pub per_disc: Vec<DerivativeBoundReport>,
    /// max over the family of sup ||D_tau X|| / ||t||.
    pub fitted_c: f64,
    pub min_lower_margin: f64,
    pub b: f64,
}

pub fn dtau_bounds(discs: &[AnalyticDisc], v: &CutoffV) -> FamilyBoundReport {
    let per_disc: Vec<DerivativeBoundReport> =
        discs.iter().map(|d| dtau_bounds_single(d, v)).collect();
    let fitted_c = per_disc.iter().map(|r| r.fitted_c).fold(0.0f64, f64::max);
    let min_lower_margin = per_disc
        .iter()
        .map(|r| r.lower_margin)
        .fold(f64::INFINITY, f64::min);
    FamilyBoundReport {
        per_disc,
        fitted_c,
        min_lower_margin,
        b: v.normal_bound(),
    }
}

/// Fitted constant of the defect estimate on gamma0: the max over the
/// family of sup_k |D_tau X_k + t_k D_n v| / sup ||D_tau X||. Scales
/// linearly with the parameter box size for polynomial graphs.
pub fn sandwich_eps_fit(discs: &[AnalyticDisc], v: &CutoffV) -> f64 {
    let nodes = v.gamma0_nodes();
    let mut worst = 0.0f64;
    for disc in discs {
        let d = d_tau(disc.x_trace());
        let t = &disc.params().t;
        let mut defect = 0.0f64;
        let mut scale = 0.0f64;
        for &j in &nodes {
            let dnv = v.normal_derivative().value(0, j);
            for k in 0..d.dim() {
                defect = defect.max((d.value(k, j) + t[k] * dnv).abs());
                scale = scale.max(d.value(k, j).abs());
            }
        }
        if scale > 1e-14 {
            worst = worst.max(defect / scale);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::CircleGrid;
    use crate::poly::{PolyMap, PolyTerm, Polynomial};
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid() -> CircleGrid {
        CircleGrid::new(1024).unwrap()
    }

    fn cutoff() -> CutoffV {
        CutoffV::default(grid(), (PI / 4.0, 3.0 * PI / 4.0)).unwrap()
    }

    fn quad_graph() -> TotallyRealGraph {
        let h = PolyMap::new(
            2,
            vec![
                Polynomial::from_terms(
                    2,
                    &[PolyTerm {
                        multi_index: vec![2, 0],
                        coeff: 1.0,
                    }],
                ),
                Polynomial::from_terms(
                    2,
                    &[PolyTerm {
                        multi_index: vec![1, 1],
                        coeff: 1.0,
                    }],
                ),
            ],
        );
        TotallyRealGraph::new(2, 1.0, h).unwrap()
    }

    fn flat_graph() -> TotallyRealGraph {
        TotallyRealGraph::flat(2, 1.0)
    }

    fn v_extension(v: &CutoffV, zeta: DiscPoint) -> f64 {
        FourierCoeffs::of(v.values()).harmonic_eval(zeta)[0]
    }

    fn zeta0() -> DiscPoint {
        DiscPoint::new(0.9, 3.0 * PI / 2.0).unwrap()
    }

    #[test]
    fn full_jacobian_flat_closed_form() {
        let v = cutoff();
        let p = DiscParams::new(vec![0.0, 0.0], vec![0.0, 0.0]);
        let rep = jac_s_full(&flat_graph(), &v, &p, zeta0(), DEFAULT_FD_STEP).unwrap();
        let vz = v_extension(&v, zeta0());
        assert!(vz > 0.1, "cutoff extension too small at test point: {vz}");
        assert_abs_diff_eq!(rep.det, vz * vz, epsilon = 1e-9);

        // The closed form holds at any (c, t) for the flat graph.
        let p = DiscParams::new(vec![0.01, -0.02], vec![0.03, 0.015]);
        let rep = jac_s_full(&flat_graph(), &v, &p, zeta0(), DEFAULT_FD_STEP).unwrap();
        assert_abs_diff_eq!(rep.det, vz * vz, epsilon = 1e-8);
    }

    #[test]
    fn full_jacobian_quadratic_t0_leading_term() {
        let v = cutoff();
        let p = DiscParams::new(vec![0.01, -0.005], vec![0.0, 0.0]);
        let rep = jac_s_full(&quad_graph(), &v, &p, zeta0(), DEFAULT_FD_STEP).unwrap();
        let vz = v_extension(&v, zeta0());
        assert!((rep.det - vz * vz).abs() <= 1e-6, "det {} vs {}", rep.det, vz * vz);
    }

    #[test]
    fn full_jacobian_richardson_control() {
        let v = cutoff();
        let mut r = rng::substream(7, 0);
        use rand::Rng;
        let p = DiscParams::new(
            vec![r.gen_range(-0.02..0.02), r.gen_range(-0.02..0.02)],
            vec![r.gen_range(-0.02..0.02), r.gen_range(-0.02..0.02)],
        );
        let rep = jac_s_full(&quad_graph(), &v, &p, zeta0(), DEFAULT_FD_STEP).unwrap();
        assert!(rep.det.abs() > 0.0);
        // Gradient check: half-step determinant agrees with the
        // extrapolated value within the recorded estimate, and the
        // relative error of the raw half-step value is small.
        assert!(rep.richardson_error <= 1e-4 * rep.det.abs());
    }

    #[test]
    fn full_jacobian_scan_no_sign_change() {
        let v = cutoff();
        let q = ParamBox::cube(2, 0.02, 0.01);
        let scan =
            scan_full_jacobian(&quad_graph(), &v, &q, zeta0(), 3, DEFAULT_FD_STEP).unwrap();
        assert_eq!(scan.points, 81);
        assert!(!scan.sign_change);
        assert!(scan.min_abs_det > 0.0);
    }

    #[test]
    fn open_image_flat_affine_full_coverage() {
        let v = cutoff();
        let q = ParamBox::cube(2, 0.05, 0.02);
        let mut r = rng::substream(7, 1);
        let rep =
            open_image_check(&flat_graph(), &v, &q, zeta0(), 1e-3, 50, &mut r).unwrap();
        assert_eq!(rep.attained, rep.probes, "failures: {}", rep.inversion_failures);
    }

    #[test]
    fn open_image_quadratic_full_coverage() {
        let v = cutoff();
        let q = ParamBox::cube(2, 0.05, 0.02);
        let mut r = rng::substream(7, 2);
        let rep =
            open_image_check(&quad_graph(), &v, &q, zeta0(), 1e-3, 50, &mut r).unwrap();
        assert_eq!(rep.attained, rep.probes, "failures: {}", rep.inversion_failures);
    }

    #[test]
    fn open_image_oversized_probe_radius_reported() {
        let v = cutoff();
        let q = ParamBox::cube(2, 0.05, 0.02);
        let mut r = rng::substream(7, 3);
        let rep =
            open_image_check(&quad_graph(), &v, &q, zeta0(), 1.0, 30, &mut r).unwrap();
        assert!(rep.fraction < 1.0);
    }

    fn zeta_near_gamma0() -> DiscPoint {
        DiscPoint::new(1.0 - 1e-3, PI / 2.0).unwrap()
    }

    #[test]
    fn reduced_jacobian_flat_closed_form() {
        // For h == 0 the determinant factors exactly as
        // v_ext(zeta)^{n-1} |d Phi_n / d zeta|^2.
        let v = cutoff();
        let base = DiscParams::new(vec![0.0, 0.0], vec![0.0, 0.02]);
        let zeta = zeta_near_gamma0();
        let rep = jac_s_reduced(&flat_graph(), &v, &base, zeta, 1e-4).unwrap();
        let expect = v_extension(&v, zeta) * rep.d33_analytic;
        assert!(
            (rep.report.det - expect).abs() <= 1e-6 * expect.abs().max(1e-12),
            "det {} vs closed form {}",
            rep.report.det,
            expect
        );
        assert_abs_diff_eq!(rep.d33_minor, rep.d33_analytic, epsilon = 1e-6);
    }

    #[test]
    fn reduced_jacobian_quadratic_block_factorization() {
        let v = cutoff();
        let base = DiscParams::new(vec![1e-3, 1e-3], vec![0.0, 0.02]);
        let zeta = zeta_near_gamma0();
        let rep = jac_s_reduced(&quad_graph(), &v, &base, zeta, 1e-4).unwrap();
        assert!(rep.report.det.abs() > 0.0);
        let factored = rep.upper_block_det * rep.d33_analytic;
        let residual = (rep.report.det - factored).abs();
        assert!(
            residual <= 0.2 * rep.report.det.abs(),
            "det {} vs factored {} (residual {})",
            rep.report.det,
            factored,
            residual
        );
        assert_abs_diff_eq!(rep.d33_minor, rep.d33_analytic, epsilon = 1e-6);
    }

    #[test]
    fn reduced_d33_lower_bound_near_gamma_node() {
        // With t aligned to the last axis, |d Phi_n / d zeta|^2 near a
        // gamma0 node dominates (|t_n| b / 2)^2 - s for a modest s margin.
        let v = cutoff();
        let base = DiscParams::new(vec![1e-3, 1e-3], vec![0.0, 0.02]);
        let theta = grid().node_angle(256); // pi/2, mid gamma0
        let zeta = DiscPoint::new(1.0 - 1e-4, theta).unwrap();
        let rep = jac_s_reduced(&quad_graph(), &v, &base, zeta, 1e-4).unwrap();
        let floor = (0.02 * v.normal_bound() / 2.0).powi(2);
        let s = 0.5 * floor;
        assert!(
            rep.d33_analytic >= floor - s,
            "D33 {} below floor {}",
            rep.d33_analytic,
            floor - s
        );
    }

    #[test]
    fn boundary_minor_flat_closed_form() {
        // h == 0, t = (0, t2): X2 = c2 - t2 conj(v), so the minor is
        // |t2 D_tau conj(v)(tau)| exactly.
        let v = cutoff();
        let t2 = 0.02;
        let base = DiscParams::new(vec![0.0, 0.0], vec![0.0, t2]);
        let tau = PI / 2.0;
        let rep = jac_boundary(&flat_graph(), &v, &base, tau, DEFAULT_FD_STEP).unwrap();
        let dn = FourierCoeffs::of(v.normal_derivative())
            .harmonic_eval(DiscPoint { r: 1.0, theta: tau })[0];
        assert!(!rep.degenerate_t0);
        assert_abs_diff_eq!(rep.det.abs(), (t2 * dn).abs(), epsilon = 1e-8);
    }

    #[test]
    fn boundary_minor_t0_degenerate_flagged() {
        let v = cutoff();
        let base = DiscParams::new(vec![0.01, 0.0], vec![0.0, 0.0]);
        let rep = jac_boundary(&quad_graph(), &v, &base, PI / 2.0, DEFAULT_FD_STEP).unwrap();
        assert!(rep.degenerate_t0);
        assert_abs_diff_eq!(rep.det, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn boundary_minor_quadratic_lower_bound() {
        let v = cutoff();
        let t2 = 0.02;
        let base = DiscParams::new(vec![0.005, 0.005], vec![0.0, t2]);
        let rep = jac_boundary(&quad_graph(), &v, &base, PI / 2.0, DEFAULT_FD_STEP).unwrap();
        // Slack 0.1 under the b ||t|| / 2 floor.
        assert!(
            rep.det.abs() >= 0.4 * v.normal_bound() * t2,
            "minor {} below 0.4 b t",
            rep.det
        );
    }

    fn solved(m: &TotallyRealGraph, v: &CutoffV, p: DiscParams) -> AnalyticDisc {
        assemble_disc(solve_bishop(m, v, &p, 1e-12, 100).unwrap(), v)
    }

    #[test]
    fn dtau_flat_closed_form_saturates_bounds() {
        let v = cutoff();
        let m = flat_graph();
        let t = vec![0.01, 0.02];
        let d = solved(&m, &v, DiscParams::new(vec![0.0, 0.0], t.clone()));
        let rep = dtau_bounds_single(&d, &v);
        let nodes = v.gamma0_nodes();
        let max_dn = nodes
            .iter()
            .map(|&j| v.normal_derivative().value(0, j).abs())
            .fold(0.0f64, f64::max);
        // D_tau X = -t (.) D_tau conj(v) exactly.
        for k in 0..2 {
            assert_abs_diff_eq!(rep.sup_components[k], t[k].abs() * max_dn, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(rep.fitted_c, max_dn, epsilon = 1e-10);
        // The lower bound saturates at a node attaining b.
        let t_norm = 0.02;
        assert_abs_diff_eq!(
            rep.lower_margin,
            t_norm * rep.b / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn dtau_quadratic_homogeneity_under_t_halving() {
        let v = cutoff();
        let m = quad_graph();
        let full = solved(&m, &v, DiscParams::new(vec![0.01, 0.0], vec![0.0, 0.02]));
        let half = solved(&m, &v, DiscParams::new(vec![0.01, 0.0], vec![0.0, 0.01]));
        let c_full = dtau_bounds_single(&full, &v).fitted_c;
        let c_half = dtau_bounds_single(&half, &v).fitted_c;
        assert!(
            (c_full - c_half).abs() <= 0.1 * c_full,
            "C drift: {c_full} vs {c_half}"
        );
    }

    #[test]
    fn dtau_quadratic_component_lower_bound() {
        let v = cutoff();
        let m = quad_graph();
        let t2 = 0.02;
        let d = solved(&m, &v, DiscParams::new(vec![0.01, 0.0], vec![0.0, t2]));
        let dt = d_tau(d.x_trace());
        let min_abs = v
            .gamma0_nodes()
            .iter()
            .map(|&j| dt.value(1, j).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_abs >= t2 * v.normal_bound() / 2.0 - 1e-6,
            "min |D_tau X_2| = {min_abs}"
        );
    }

    #[test]
    fn dtau_family_report_aggregates() {
        let v = cutoff();
        let m = quad_graph();
        let discs = vec![
            solved(&m, &v, DiscParams::new(vec![0.01, 0.0], vec![0.0, 0.02])),
            solved(&m, &v, DiscParams::new(vec![0.0, 0.01], vec![0.0, 0.01])),
        ];
        let fam = dtau_bounds(&discs, &v);
        assert_eq!(fam.per_disc.len(), 2);
        assert!(fam.fitted_c >= fam.per_disc[0].fitted_c.max(fam.per_disc[1].fitted_c) - 1e-15);
        assert!(fam.min_lower_margin.is_finite());
    }

    #[test]
    fn sandwich_fit_shrinks_with_box() {
        let v = cutoff();
        let m = quad_graph();
        let q = ParamBox::cube(2, 0.04, 0.02);
        let family = |bx: &ParamBox| -> Vec<AnalyticDisc> {
            bx.corners()
                .into_iter()
                .map(|p| solved(&m, &v, p))
                .collect()
        };
        let eps_full = sandwich_eps_fit(&family(&q), &v);
        let eps_half = sandwich_eps_fit(&family(&q.halved()), &v);
        assert!(eps_full > 0.0);
        assert!(
            eps_half <= 0.6 * eps_full,
            "fit did not shrink: {eps_full} -> {eps_half}"
        );
    }
}
