//! Picard fixed-point solver for the Bishop equation
//! X = c - Im(h o X + t v) on the circle, and assembly of the resulting
//! family of analytic discs attached to the manifold along the upper
//! half-circle.

use crate::circle::{conjugate, CircleGrid, DiscPoint, FourierCoeffs, GridFn};
use crate::geometry::{CutoffV, TotallyRealGraph};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Contraction factor the certification loop must reach.
pub const CONTRACTION_TARGET: f64 = 0.5;

#[derive(Debug, Error, Clone)]
pub enum BishopError {
    #[error("Picard iteration did not converge in {iterations} iterations (last update {last_update:.3e})")]
    NoConvergence { iterations: usize, last_update: f64 },
    #[error("boundary trace left the domain of h at iteration {iteration} (|X| = {norm:.3e})")]
    DomainEscape { iteration: usize, norm: f64 },
    #[error("parameter dimension mismatch: manifold dim {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box halving exceeded {rounds} rounds without certifying contraction (factor {factor:.3e})")]
    BoxCollapsed { rounds: usize, factor: f64 },
    #[error("parameters lie outside the given box")]
    OutsideBox,
}

/// Disc parameters (c, t) in R^n x R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscParams {
    pub c: Vec<f64>,
    pub t: Vec<f64>,
}

impl DiscParams {
    pub fn new(c: Vec<f64>, t: Vec<f64>) -> Self {
        assert_eq!(c.len(), t.len());
        Self { c, t }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// ||c|| + ||t|| in the componentwise max norm.
    pub fn norm_sum(&self) -> f64 {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        m(&self.c) + m(&self.t)
    }

    pub fn t_norm(&self) -> f64 {
        self.t.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }
}

/// Parameter box Q = Q_c x Q_t, centered at the origin with per-axis
/// half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub c_half_widths: Vec<f64>,
    pub t_half_widths: Vec<f64>,
}

impl ParamBox {
    pub fn new(c_half_widths: Vec<f64>, t_half_widths: Vec<f64>) -> Self {
        assert_eq!(c_half_widths.len(), t_half_widths.len());
        assert!(c_half_widths.iter().chain(&t_half_widths).all(|&w| w > 0.0));
        Self {
            c_half_widths,
            t_half_widths,
        }
    }

    pub fn cube(dim: usize, c_half_width: f64, t_half_width: f64) -> Self {
        Self::new(vec![c_half_width; dim], vec![t_half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.c_half_widths.len()
    }

    /// Max over the box of ||c|| + ||t||.
    pub fn epsilon(&self) -> f64 {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(*x));
        m(&self.c_half_widths) + m(&self.t_half_widths)
    }

    pub fn contains(&self, p: &DiscParams) -> bool {
        p.c.iter()
            .zip(&self.c_half_widths)
            .chain(p.t.iter().zip(&self.t_half_widths))
            .all(|(x, w)| x.abs() <= w + 1e-14)
    }

    pub fn halved(&self) -> ParamBox {
        ParamBox {
            c_half_widths: self.c_half_widths.iter().map(|w| w / 2.0).collect(),
            t_half_widths: self.t_half_widths.iter().map(|w| w / 2.0).collect(),
        }
    }

    pub fn center(&self) -> DiscParams {
        DiscParams::new(vec![0.0; self.dim()], vec![0.0; self.dim()])
    }

    /// All 2^(2n) sign corners of the box.
    pub fn corners(&self) -> Vec<DiscParams> {
        let n = self.dim();
        let total = 1usize << (2 * n);
        (0..total)
            .map(|mask| {
                let sgn = |bit: usize| if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
                DiscParams::new(
                    (0..n).map(|i| sgn(i) * self.c_half_widths[i]).collect(),
                    (0..n).map(|i| sgn(n + i) * self.t_half_widths[i]).collect(),
                )
            })
            .collect()
    }

    /// Uniformly random parameters in the box.
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> DiscParams {
        let draw = |rng: &mut R, w: &f64| rng.gen_range(-*w..=*w);
        DiscParams::new(
            self.c_half_widths.iter().map(|w| draw(rng, w)).collect(),
            self.t_half_widths.iter().map(|w| draw(rng, w)).collect(),
        )
    }

    /// Deterministic lattice with `per_axis` points on each of the 2n axes.
    pub fn lattice(&self, per_axis: usize) -> Vec<DiscParams> {
        assert!(per_axis >= 1);
        let widths: Vec<f64> = self
            .c_half_widths
            .iter()
            .chain(&self.t_half_widths)
            .copied()
            .collect();
        let axes = widths.len();
        let coord = |w: f64, i: usize| {
            if per_axis == 1 {
                0.0
            } else {
                -w + 2.0 * w * i as f64 / (per_axis - 1) as f64
            }
        };
        let total = per_axis.pow(axes as u32);
        (0..total)
            .map(|mut idx| {
                let mut vals = Vec::with_capacity(axes);
                for w in &widths {
                    vals.push(coord(*w, idx % per_axis));
                    idx /= per_axis;
                }
                let n = self.dim();
                DiscParams::new(vals[..n].to_vec(), vals[n..].to_vec())
            })
            .collect()
    }
}

/// A parameter box whose Picard map has an empirically certified
/// contraction factor below 1/2.
#[derive(Debug, Clone, Serialize)]
pub struct CertifiedBox {
    pub param_box: ParamBox,
    pub contraction_factor: f64,
    pub halvings: usize,
}

/// One solved Bishop disc boundary trace.
#[derive(Debug, Clone)]
pub struct BishopSolution {
    pub params: DiscParams,
    pub x_trace: GridFn,
    pub h_star: GridFn,
    pub residual: f64,
    pub iterations: usize,
}

/// Boundary data of the Picard map input: h o X + t v at the nodes.
fn forcing(
    m: &TotallyRealGraph,
    v: &CutoffV,
    t: &[f64],
    x: &GridFn,
    iteration: usize,
) -> Result<GridFn, BishopError> {
    let n_nodes = x.grid().n_nodes();
    let d = m.dim();
    let mut comps = vec![Vec::with_capacity(n_nodes); d];
    for j in 0..n_nodes {
        let row = x.node(j);
        if !m.in_domain(&row) {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            return Err(BishopError::DomainEscape { iteration, norm });
        }
        let h = m.eval_h(&row);
        let vj = v.value(j);
        for k in 0..d {
            comps[k].push(h[k] + t[k] * vj);
        }
    }
    Ok(GridFn::from_components(x.grid(), comps).expect("finite forcing"))
}

fn picard_step(
    m: &TotallyRealGraph,
    v: &CutoffV,
    p: &DiscParams,
    x: &GridFn,
    iteration: usize,
) -> Result<GridFn, BishopError> {
    let w = forcing(m, v, &p.t, x, iteration)?;
    let conj_w = conjugate(&w);
    let n_nodes = x.grid().n_nodes();
    let comps = (0..m.dim())
        .map(|k| {
            (0..n_nodes)
                .map(|j| p.c[k] - conj_w.value(k, j))
                .collect::<Vec<f64>>()
        })
        .collect();
    Ok(GridFn::from_components(x.grid(), comps).expect("finite step"))
}

/// Solve the Bishop equation by Picard iteration from X == c.
pub fn solve_bishop(
    m: &TotallyRealGraph,
    v: &CutoffV,
    p: &DiscParams,
    tol: f64,
    max_iter: usize,
) -> Result<BishopSolution, BishopError> {
    if p.dim() != m.dim() {
        return Err(BishopError::DimensionMismatch {
            expected: m.dim(),
            got: p.dim(),
        });
    }
    let grid = v.grid();
    let mut x = GridFn::constant(grid, &p.c);
    let mut prev_update = f64::INFINITY;
    let mut growth_streak = 0usize;
    for iteration in 1..=max_iter {
        let next = picard_step(m, v, p, &x, iteration)?;
        let update = next.sup_distance(&x);
        x = next;
        if update < tol {
            let w = forcing(m, v, &p.t, &x, iteration)?;
            let conj_w = conjugate(&w);
            let mut residual = 0.0f64;
            for k in 0..m.dim() {
                for j in 0..grid.n_nodes() {
                    residual = residual.max((x.value(k, j) - (p.c[k] - conj_w.value(k, j))).abs());
                }
            }
            let h_star = x.map_nodes(m.dim(), |row| m.eval_h(row));
            return Ok(BishopSolution {
                params: p.clone(),
                x_trace: x,
                h_star,
                residual,
                iterations: iteration,
            });
        }
        if update >= prev_update {
            growth_streak += 1;
            if growth_streak >= 5 {
                return Err(BishopError::NoConvergence {
                    iterations: iteration,
                    last_update: update,
                });
            }
        } else {
            growth_streak = 0;
        }
        prev_update = update;
    }
    Err(BishopError::NoConvergence {
        iterations: max_iter,
        last_update: prev_update,
    })
}

/// Estimate the Lipschitz factor of the Picard map over the box by sampled
/// perturbation ratios and halve the box until the factor drops below 1/2.
pub fn contraction_certify(
    m: &TotallyRealGraph,
    v: &CutoffV,
    q: &ParamBox,
    max_halvings: usize,
) -> Result<CertifiedBox, BishopError> {
    let grid = v.grid();
    let mut current = q.clone();
    let mut factor = f64::INFINITY;
    for halvings in 0..=max_halvings {
        factor = empirical_factor(m, v, grid, &current)?;
        if factor < CONTRACTION_TARGET {
            return Ok(CertifiedBox {
                param_box: current,
                contraction_factor: factor,
                halvings,
            });
        }
        current = current.halved();
    }
    Err(BishopError::BoxCollapsed {
        rounds: max_halvings,
        factor,
    })
}

fn empirical_factor(
    m: &TotallyRealGraph,
    v: &CutoffV,
    grid: CircleGrid,
    q: &ParamBox,
) -> Result<f64, BishopError> {
    // Probe at the scale of the box: a fixed amplitude would leave a
    // second-order floor in the measured ratio that halving cannot remove.
    let amp = q.epsilon().min(1e-3).max(1e-9);
    let n = m.dim();
    let mut factor = 0.0f64;
    for p in q.corners() {
        let base = GridFn::constant(grid, &p.c);
        let t_base = picard_step(m, v, &p, &base, 0)?;
        for mode in 1..=3u32 {
            for comp in 0..n {
                let perturbed = {
                    let mut comps: Vec<Vec<f64>> =
                        (0..n).map(|k| base.component(k).to_vec()).collect();
                    for (j, th) in grid.angles().enumerate() {
                        comps[comp][j] += amp * (mode as f64 * th).cos();
                    }
                    GridFn::from_components(grid, comps).expect("finite perturbation")
                };
                let t_pert = picard_step(m, v, &p, &perturbed, 0)?;
                factor = factor.max(t_pert.sup_distance(&t_base) / amp);
            }
        }
    }
    Ok(factor)
}

/// A solved disc with its interior evaluators.
#[derive(Debug, Clone)]
pub struct AnalyticDisc {
    solution: BishopSolution,
    x_coeffs: FourierCoeffs,
    w_coeffs: FourierCoeffs,
    w_trace: GridFn,
    conj_w_trace: GridFn,
}

impl AnalyticDisc {
    pub fn solution(&self) -> &BishopSolution {
        &self.solution
    }

    pub fn params(&self) -> &DiscParams {
        &self.solution.params
    }

    pub fn grid(&self) -> CircleGrid {
        self.solution.x_trace.grid()
    }

    pub fn x_trace(&self) -> &GridFn {
        &self.solution.x_trace
    }

    pub fn x_coeffs(&self) -> &FourierCoeffs {
        &self.x_coeffs
    }

    pub fn w_coeffs(&self) -> &FourierCoeffs {
        &self.w_coeffs
    }

    /// Boundary trace of h* + t v.
    pub fn w_trace(&self) -> &GridFn {
        &self.w_trace
    }

    /// Phi(zeta) = X(zeta) + i [h*(zeta) + t v(zeta)] through the harmonic
    /// extensions of the two boundary traces.
    pub fn eval(&self, zeta: DiscPoint) -> Vec<Complex64> {
        let re = self.x_coeffs.harmonic_eval(zeta);
        let im = self.w_coeffs.harmonic_eval(zeta);
        re.into_iter()
            .zip(im)
            .map(|(x, y)| Complex64::new(x, y))
            .collect()
    }

    /// The manifestly holomorphic Schwarz form c + i{w + i Im w}(zeta).
    /// Agrees with [`Self::eval`] within the solver residual.
    pub fn eval_holomorphic(&self, zeta: Complex64) -> Vec<Complex64> {
        let f = self.w_coeffs.holomorphic_eval(zeta);
        self.solution
            .params
            .c
            .iter()
            .zip(f)
            .map(|(&c, fk)| Complex64::new(c, 0.0) + Complex64::new(0.0, 1.0) * fk)
            .collect()
    }

    /// Complex derivative d Phi / d zeta of the Schwarz form.
    pub fn derivative_holomorphic(&self, zeta: Complex64) -> Vec<Complex64> {
        self.w_coeffs
            .holomorphic_derivative(zeta)
            .into_iter()
            .map(|fk| Complex64::new(0.0, 1.0) * fk)
            .collect()
    }

    /// Boundary values of the holomorphic form at node `j`:
    /// (c - Im w, w). Differs from (X, w) by at most the residual.
    pub fn boundary_value(&self, j: usize) -> Vec<Complex64> {
        (0..self.solution.x_trace.dim())
            .map(|k| {
                Complex64::new(
                    self.solution.params.c[k] - self.conj_w_trace.value(k, j),
                    self.w_trace.value(k, j),
                )
            })
            .collect()
    }

    /// Sup over sampled points of the discrete Cauchy-Riemann defect
    /// |d Phi/d theta - i r d Phi/d r| of the trace-extension evaluator on
    /// the circle of radius `r`.
    pub fn cauchy_riemann_residual(&self, r: f64, samples: usize) -> f64 {
        let h = 1e-5;
        let mut worst = 0.0f64;
        for s in 0..samples {
            let theta = 2.0 * std::f64::consts::PI * s as f64 / samples as f64;
            let at = |rr: f64, tt: f64| self.eval(DiscPoint { r: rr, theta: tt });
            let dth: Vec<Complex64> = at(r, theta + h)
                .iter()
                .zip(at(r, theta - h))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            let dr: Vec<Complex64> = at(r + h, theta)
                .iter()
                .zip(at(r - h, theta))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            for (a, b) in dth.iter().zip(&dr) {
                worst = worst.max((a - Complex64::new(0.0, r) * b).norm());
            }
        }
        worst
    }
}

/// Assemble the disc evaluators from a converged solution.
pub fn assemble_disc(sol: BishopSolution, v: &CutoffV) -> AnalyticDisc {
    let grid = sol.x_trace.grid();
    let d = sol.x_trace.dim();
    let mut comps = vec![Vec::with_capacity(grid.n_nodes()); d];
    for j in 0..grid.n_nodes() {
        let vj = v.value(j);
        for k in 0..d {
            comps[k].push(sol.h_star.value(k, j) + sol.params.t[k] * vj);
        }
    }
    let w_trace = GridFn::from_components(grid, comps).expect("finite w");
    let conj_w_trace = conjugate(&w_trace);
    AnalyticDisc {
        x_coeffs: FourierCoeffs::of(&sol.x_trace),
        w_coeffs: FourierCoeffs::of(&w_trace),
        w_trace,
        conj_w_trace,
        solution: sol,
    }
}

/// Sup over the attachment arc of |Im Phi - h(Re Phi)| for the holomorphic
/// boundary trace.
pub fn attachment_error(d: &AnalyticDisc, m: &TotallyRealGraph, v: &CutoffV) -> f64 {
    let mut worst = 0.0f64;
    for j in v.gamma_nodes() {
        let z = d.boundary_value(j);
        let re: Vec<f64> = z.iter().map(|c| c.re).collect();
        let h = m.eval_h(&re);
        for (k, hk) in h.iter().enumerate() {
            worst = worst.max((z[k].im - hk).abs());
        }
    }
    worst
}

/// Harmonic extension of X at the origin; equals c by the mean-value
/// normalization of the conjugation operator.
pub fn center(d: &AnalyticDisc) -> Vec<f64> {
    d.x_coeffs.harmonic_eval(DiscPoint::origin())
}

/// Result of a parameter sweep: per-point outcome in deterministic lattice
/// order.
pub struct SweepResult {
    pub items: Vec<(DiscParams, Result<AnalyticDisc, BishopError>)>,
}

impl SweepResult {
    pub fn converged(&self) -> impl Iterator<Item = &AnalyticDisc> {
        self.items.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failure_count(&self) -> usize {
        self.items.iter().filter(|(_, r)| r.is_err()).count()
    }
}

/// Solve the family on the lattice of (c, t) values; per-point failures
/// are reported, not fatal.
pub fn sweep(
    m: &TotallyRealGraph,
    v: &CutoffV,
    q: &ParamBox,
    per_axis: usize,
    tol: f64,
    max_iter: usize,
) -> SweepResult {
    let params = q.lattice(per_axis);
    let items: Vec<_> = params
        .into_par_iter()
        .map(|p| {
            let r = solve_bishop(m, v, &p, tol, max_iter).map(|sol| assemble_disc(sol, v));
            (p, r)
        })
        .collect();
    SweepResult { items }
}
