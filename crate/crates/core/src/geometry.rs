//! Manifold representations and their supporting cast: totally real and
//! generic polynomial graphs, the boundary cutoff function, measure-zero
//! exceptional sets, and slicing of generic graphs by the planes
//! y'' = x * B with graph renormalization.

use crate::circle::{conjugate, d_tau, CircleGrid, GridFn};
use crate::poly::{PolyMap, Polynomial};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;
use thiserror::Error;

/// Smallest singular value of the frame [T; JT] required for the tangent
/// space at 0 to count as totally real.
pub const TOTALLY_REAL_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("malformed graph: {0}")]
    MalformedGraph(String),
    #[error("tangent space at 0 is not totally real (sigma_min = {sigma_min:.3e})")]
    NotTotallyReal { sigma_min: f64 },
    #[error("slice is degenerate: {0}")]
    SliceDegenerate(String),
    #[error("no admissible slicing matrix found after {0} attempts")]
    ExhaustedAttempts(usize),
    #[error("exceptional set invalid: {0}")]
    InvalidExceptional(String),
    #[error("cutoff subarc [{0}, {1}] must lie strictly inside (0, pi)")]
    BadSubarc(f64, f64),
    #[error("slice matrix norm {norm:.3e} exceeds bound {bound:.3e}")]
    SliceTooLarge { norm: f64, bound: f64 },
}

/// The manifold M as a totally real graph y = h(x) over a ball in R^n,
/// with h(0) = 0 and Dh(0) = 0.
#[derive(Debug, Clone)]
pub struct TotallyRealGraph {
    dim: usize,
    domain_radius: f64,
    h: PolyMap,
}

impl TotallyRealGraph {
    pub fn new(dim: usize, domain_radius: f64, h: PolyMap) -> Result<Self, GeometryError> {
        if h.n_inputs() != dim || h.n_outputs() != dim {
            return Err(GeometryError::MalformedGraph(format!(
                "graph map must be R^{dim} -> R^{dim}, got R^{} -> R^{}",
                h.n_inputs(),
                h.n_outputs()
            )));
        }
        if domain_radius <= 0.0 {
            return Err(GeometryError::MalformedGraph(
                "domain radius must be positive".into(),
            ));
        }
        let c = h.constant_part();
        if c.iter().any(|x| x.abs() > 0.0) {
            return Err(GeometryError::MalformedGraph(
                "h(0) != 0: constant coefficient present".into(),
            ));
        }
        let l = h.linear_part();
        if l.amax() > 0.0 {
            return Err(GeometryError::MalformedGraph(
                "Dh(0) != 0: linear coefficient present".into(),
            ));
        }
        Ok(Self {
            dim,
            domain_radius,
            h,
        })
    }

    /// The flat fixture M = R^n (h identically zero).
    pub fn flat(dim: usize, domain_radius: f64) -> Self {
        Self::new(dim, domain_radius, PolyMap::zero(dim, dim)).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn h(&self) -> &PolyMap {
        &self.h
    }

    pub fn eval_h(&self, x: &[f64]) -> Vec<f64> {
        self.h.eval(x)
    }

    pub fn jacobian_h(&self, x: &[f64]) -> DMatrix<f64> {
        self.h.jacobian(x)
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().map(|v| v * v).sum::<f64>().sqrt() <= self.domain_radius
    }
}

/// A generic graph y' = h(x, y'') of dimension m in C^n (n <= m <= 2n),
/// parametrized over a box of radius delta.
#[derive(Debug, Clone)]
pub struct GenericGraph {
    ambient: usize,
    manifold_dim: usize,
    delta: f64,
    h: PolyMap,
}

impl GenericGraph {
    pub fn new(
        ambient: usize,
        manifold_dim: usize,
        delta: f64,
        h: PolyMap,
    ) -> Result<Self, GeometryError> {
        let n = ambient;
        let m = manifold_dim;
        if m < n || m > 2 * n {
            return Err(GeometryError::MalformedGraph(format!(
                "manifold dimension {m} must satisfy n <= m <= 2n for n = {n}"
            )));
        }
        if h.n_inputs() != m || h.n_outputs() != 2 * n - m {
            return Err(GeometryError::MalformedGraph(format!(
                "graph map must be R^{m} -> R^{}, got R^{} -> R^{}",
                2 * n - m,
                h.n_inputs(),
                h.n_outputs()
            )));
        }
        if h.constant_part().iter().any(|x| x.abs() > 0.0) || h.linear_part().amax() > 0.0 {
            return Err(GeometryError::MalformedGraph(
                "generic graph requires h(0) = 0 and Dh(0) = 0".into(),
            ));
        }
        Ok(Self {
            ambient,
            manifold_dim,
            delta,
            h,
        })
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn manifold_dim(&self) -> usize {
        self.manifold_dim
    }

    pub fn codim2(&self) -> usize {
        self.manifold_dim - self.ambient
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn h(&self) -> &PolyMap {
        &self.h
    }
}

/// The cutoff of condition (*): v = 0 on the upper half-circle gamma,
/// v > 0 strictly inside the lower half-circle, C-infinity on T.
#[derive(Debug, Clone)]
pub struct CutoffV {
    values: GridFn,
    conj: GridFn,
    normal_deriv: GridFn,
    gamma0: (f64, f64),
    b: f64,
}

/// Pointwise formula of the default cutoff: the classic bump
/// exp(-1/((theta - pi)(2 pi - theta))) on (pi, 2 pi), zero elsewhere.
pub fn default_cutoff_value(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI && t < 2.0 * PI {
        (-1.0 / ((t - PI) * (2.0 * PI - t))).exp()
    } else {
        0.0
    }
}

impl CutoffV {
    /// Build the default cutoff on `grid`, with the compact subarc
    /// `gamma0` inside gamma on which the normal-derivative bound b is
    /// taken. The bound is computed as the tangential derivative of the
    /// harmonic conjugate, which on gamma coincides with the normal
    /// derivative of the Poisson extension of v.
    pub fn default(grid: CircleGrid, gamma0: (f64, f64)) -> Result<Self, GeometryError> {
        let (a, b_end) = gamma0;
        if !(0.0 < a && a < b_end && b_end < PI) {
            return Err(GeometryError::BadSubarc(a, b_end));
        }
        let values = GridFn::from_fn(grid, default_cutoff_value);
        let conj = conjugate(&values);
        let normal_deriv = d_tau(&conj);
        let b = grid
            .arc_nodes(a, b_end)
            .into_iter()
            .map(|j| normal_deriv.value(0, j).abs())
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            values,
            conj,
            normal_deriv,
            gamma0,
            b,
        })
    }

    pub fn grid(&self) -> CircleGrid {
        self.values.grid()
    }

    pub fn values(&self) -> &GridFn {
        &self.values
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values.value(0, node)
    }

    /// Boundary trace of the harmonic conjugate of v.
    pub fn conjugate_trace(&self) -> &GridFn {
        &self.conj
    }

    /// D_tau of the conjugate trace; equals the normal derivative of the
    /// Poisson extension of v on gamma.
    pub fn normal_derivative(&self) -> &GridFn {
        &self.normal_deriv
    }

    pub fn gamma0(&self) -> (f64, f64) {
        self.gamma0
    }

    pub fn gamma0_nodes(&self) -> Vec<usize> {
        self.grid().arc_nodes(self.gamma0.0, self.gamma0.1)
    }

    /// Nodes of the attachment arc gamma = [0, pi].
    pub fn gamma_nodes(&self) -> Vec<usize> {
        self.grid().arc_nodes(0.0, PI)
    }

    /// inf over gamma0 of |D_n v|, strictly positive for the default cutoff.
    pub fn normal_bound(&self) -> f64 {
        self.b
    }
}

/// Measure-zero exceptional set given as a finite union of polynomial zero
/// sets on the manifold's parameter domain.
#[derive(Debug, Clone)]
pub struct ExceptionalSet {
    surfaces: Vec<Polynomial>,
    eta: f64,
}

impl ExceptionalSet {
    pub fn new(surfaces: Vec<Polynomial>, eta: f64) -> Result<Self, GeometryError> {
        if eta <= 0.0 {
            return Err(GeometryError::InvalidExceptional(
                "membership tolerance eta must be positive".into(),
            ));
        }
        for (i, g) in surfaces.iter().enumerate() {
            if g.is_zero() {
                return Err(GeometryError::InvalidExceptional(format!(
                    "surface {i} is identically zero, so its zero set is not measure zero"
                )));
            }
        }
        Ok(Self { surfaces, eta })
    }

    pub fn empty() -> Self {
        Self {
            surfaces: Vec::new(),
            eta: 1e-6,
        }
    }

    pub fn surfaces(&self) -> &[Polynomial] {
        &self.surfaces
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    /// True iff the point lies within eta of some surface's zero set, in
    /// the residual sense min_i |g_i(x)| <= eta.
    pub fn membership(&self, x: &[f64]) -> bool {
        self.surfaces.iter().any(|g| g.eval(x).abs() <= self.eta)
    }

    /// Restrict the surfaces to the slice y'' = x * B (parameters become x).
    pub fn sliced(&self, b: &PlaneSlice, n: usize) -> Result<ExceptionalSet, GeometryError> {
        let subs = slice_substitutions(n, b);
        let surfaces = self
            .surfaces
            .iter()
            .map(|g| g.substitute(&subs))
            .collect::<Vec<_>>();
        for (i, g) in surfaces.iter().enumerate() {
            if g.max_abs_coeff() <= 1e-12 {
                return Err(GeometryError::InvalidExceptional(format!(
                    "surface {i} vanishes identically on the slice"
                )));
            }
        }
        ExceptionalSet::new(surfaces, self.eta)
    }
}

/// Slicing plane Pi_B = { y'' = x * B }, with B an n x (m-n) matrix acting
/// on the row vector x.
#[derive(Debug, Clone)]
pub struct PlaneSlice {
    b: DMatrix<f64>,
}

impl PlaneSlice {
    pub fn new(b: DMatrix<f64>) -> Self {
        Self { b }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Operator norm of B.
    pub fn norm(&self) -> f64 {
        if self.b.ncols() == 0 || self.b.nrows() == 0 {
            0.0
        } else {
            self.b.clone().svd(false, false).singular_values[0]
        }
    }
}

/// Substitutions sending (x, y'') to (x, x * B): the first n variables map
/// to themselves, variable n+j maps to sum_i B[i,j] x_i.
fn slice_substitutions(n: usize, b: &PlaneSlice) -> Vec<Polynomial> {
    let cols = b.matrix().ncols();
    let mut subs: Vec<Polynomial> = (0..n).map(|i| Polynomial::linear(n, i, 1.0)).collect();
    for j in 0..cols {
        let mut p = Polynomial::zero(n);
        for i in 0..n {
            p = p.add(&Polynomial::linear(n, i, b.matrix()[(i, j)]));
        }
        subs.push(p);
    }
    subs
}

/// Complex-linear coordinate change w = C z used to renormalize a graph.
#[derive(Debug, Clone)]
pub struct CoordinateChange {
    forward: DMatrix<Complex64>,
    inverse: DMatrix<Complex64>,
}

impl CoordinateChange {
    pub fn identity(n: usize) -> Self {
        Self {
            forward: DMatrix::identity(n, n),
            inverse: DMatrix::identity(n, n),
        }
    }

    pub fn forward_matrix(&self) -> &DMatrix<Complex64> {
        &self.forward
    }

    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(z);
        (&self.forward * v).iter().copied().collect()
    }

    pub fn apply_inverse(&self, w: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(w);
        (&self.inverse * v).iter().copied().collect()
    }

    /// Distance of the forward matrix from the identity, entrywise sup.
    pub fn deviation_from_identity(&self) -> f64 {
        let n = self.forward.nrows();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let id = if i == j { 1.0 } else { 0.0 };
                m = m.max((self.forward[(i, j)] - Complex64::new(id, 0.0)).norm());
            }
        }
        m
    }
}

/// A graph renormalized to h(0) = 0, Dh(0) = 0 together with the
/// holomorphic coordinate change that produced it.
#[derive(Debug, Clone)]
pub struct NormalizedGraph {
    pub graph: TotallyRealGraph,
    pub change: CoordinateChange,
}

/// Rotate complex-linear coordinates so a pointed graph y = H(x) with
/// H(0) = 0 (but possibly DH(0) != 0) becomes a graph with vanishing
/// linear part. The new graph map is recovered by formal inversion of the
/// real-part coordinate, truncated at the degree of the input map.
pub fn normalize_graph(
    h: &PolyMap,
    domain_radius: f64,
) -> Result<NormalizedGraph, GeometryError> {
    let n = h.n_inputs();
    if h.n_outputs() != n {
        return Err(GeometryError::MalformedGraph(
            "normalize_graph expects a square graph map".into(),
        ));
    }
    if h.constant_part().iter().any(|c| c.abs() > 1e-14) {
        return Err(GeometryError::MalformedGraph(
            "graph must pass through the origin".into(),
        ));
    }
    let l = h.linear_part();

    // Totally real test: sigma_min of the 2n x 2n frame [T, JT] with
    // T = [I; L] and JT = [-L; I].
    let mut frame = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            frame[(i, j)] = if i == j { 1.0 } else { 0.0 };
            frame[(n + i, j)] = l[(i, j)];
            frame[(i, n + j)] = -l[(i, j)];
            frame[(n + i, n + j)] = if i == j { 1.0 } else { 0.0 };
        }
    }
    let sigma_min = frame
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if sigma_min <= TOTALLY_REAL_TOL {
        return Err(GeometryError::NotTotallyReal { sigma_min });
    }

    if l.amax() == 0.0 {
        // Already normalized.
        let graph = TotallyRealGraph::new(n, domain_radius, h.clone())?;
        return Ok(NormalizedGraph {
            graph,
            change: CoordinateChange::identity(n),
        });
    }

    // C = (I + iL)^{-1}; on M, w = C z = C(x + iH(x)) has real part
    // u(x) = x + P(x) and imaginary part s(x) = Q(x) with P, Q of degree
    // at least two.
    let i_plus_il =
        DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(if i == j { 1.0 } else { 0.0 }, l[(i, j)])
        });
    let c = i_plus_il
        .clone()
        .try_inverse()
        .ok_or(GeometryError::NotTotallyReal { sigma_min })?;
    let a_re = DMatrix::from_fn(n, n, |i, j| c[(i, j)].re);
    let b_im = DMatrix::from_fn(n, n, |i, j| c[(i, j)].im);

    let combine = |m1: &DMatrix<f64>, m2: &DMatrix<f64>| -> PolyMap {
        // row i: sum_j m1[i,j] x_j + sum_j m2[i,j] H_j(x)
        let comps = (0..n)
            .map(|i| {
                let mut p = Polynomial::zero(n);
                for j in 0..n {
                    p = p.add(&Polynomial::linear(n, j, m1[(i, j)]));
                    p = p.add(&h.component(j).scale(m2[(i, j)]));
                }
                p
            })
            .collect();
        PolyMap::new(n, comps)
    };
    let u = combine(&a_re, &(-b_im.clone()));
    let s = combine(&b_im, &a_re);

    let degree = h.degree().max(2);
    // P = nonlinear part of u; the linear part is I by construction and
    // any floating residue is dropped.
    let p_map = PolyMap::new(
        n,
        u.components()
            .iter()
            .map(|c| c.tail_from_degree(2))
            .collect(),
    );

    // Formal inversion x(u) = u - P(x(u)), truncated at the input degree.
    let identity = PolyMap::new(n, (0..n).map(|i| Polynomial::linear(n, i, 1.0)).collect());
    let mut x_of_u = identity.clone();
    for _ in 0..degree {
        let p_at = p_map.substitute(x_of_u.components()).truncate_degree(degree);
        x_of_u = PolyMap::new(
            n,
            identity
                .components()
                .iter()
                .zip(p_at.components())
                .map(|(idc, pc)| idc.add(&pc.scale(-1.0)))
                .collect(),
        );
    }

    let h_tilde_full = s.substitute(x_of_u.components()).truncate_degree(degree);
    // Degree <= 1 terms are formally zero; drop floating residue.
    let h_tilde = PolyMap::new(
        n,
        h_tilde_full
            .components()
            .iter()
            .map(|c| c.tail_from_degree(2))
            .collect(),
    );

    let graph = TotallyRealGraph::new(n, domain_radius, h_tilde)?;
    let inverse = c.clone().try_inverse().expect("C is invertible");
    Ok(NormalizedGraph {
        graph,
        change: CoordinateChange {
            forward: c,
            inverse,
        },
    })
}

/// Intersect a generic graph with the plane y'' = x * B and renormalize
/// the resulting n-dimensional pointed manifold into graph form.
pub fn slice(
    g: &GenericGraph,
    b: &PlaneSlice,
    norm_bound: f64,
) -> Result<NormalizedGraph, GeometryError> {
    let n = g.ambient();
    if g.manifold_dim() == n {
        // y'' empty: already an n-dimensional graph.
        let graph = TotallyRealGraph::new(n, g.delta(), g.h().clone())
            .map_err(|e| GeometryError::SliceDegenerate(e.to_string()))?;
        return Ok(NormalizedGraph {
            graph,
            change: CoordinateChange::identity(n),
        });
    }
    let norm = b.norm();
    if norm > norm_bound {
        return Err(GeometryError::SliceTooLarge {
            norm,
            bound: norm_bound,
        });
    }
    let subs = slice_substitutions(n, b);
    let h_prime = g.h().substitute(&subs);
    // Full graph map x -> (y', y'') = (h(x, xB), xB).
    let mut comps = h_prime.components().to_vec();
    for j in 0..g.codim2() {
        let mut p = Polynomial::zero(n);
        for i in 0..n {
            p = p.add(&Polynomial::linear(n, i, b.matrix()[(i, j)]));
        }
        comps.push(p);
    }
    let full = PolyMap::new(n, comps);
    normalize_graph(&full, g.delta()).map_err(|e| match e {
        GeometryError::NotTotallyReal { sigma_min } => {
            GeometryError::SliceDegenerate(format!("sigma_min = {sigma_min:.3e}"))
        }
        other => other,
    })
}

/// Draw random small slicing matrices until the exceptional set restricts
/// to a genuinely measure-zero set on the slice.
pub fn sample_good_b<R: Rng>(
    g: &GenericGraph,
    exceptional: &ExceptionalSet,
    rng: &mut R,
    norm_bound: f64,
    max_attempts: usize,
) -> Result<PlaneSlice, GeometryError> {
    let n = g.ambient();
    let cols = g.codim2();
    if cols == 0 {
        return Ok(PlaneSlice::new(DMatrix::zeros(n, 0)));
    }
    let entry_scale = norm_bound / (n as f64 * cols as f64).sqrt();
    for _ in 0..max_attempts {
        let b = PlaneSlice::new(DMatrix::from_fn(n, cols, |_, _| {
            rng.gen_range(-entry_scale..entry_scale)
        }));
        if b.norm() > norm_bound {
            continue;
        }
        if exceptional.is_empty() || exceptional.sliced(&b, n).is_ok() {
            return Ok(b);
        }
    }
    Err(GeometryError::ExhaustedAttempts(max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolyTerm;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> CircleGrid {
        CircleGrid::new(1024).unwrap()
    }

    fn quad_h() -> PolyMap {
        PolyMap::new(
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
        )
    }

    #[test]
    fn validate_accepts_pure_quadratic() {
        assert!(TotallyRealGraph::new(2, 1.0, quad_h()).is_ok());
    }

    #[test]
    fn validate_rejects_linear_term() {
        let h = PolyMap::new(
            2,
            vec![Polynomial::linear(2, 0, 1.0), Polynomial::zero(2)],
        );
        assert!(matches!(
            TotallyRealGraph::new(2, 1.0, h),
            Err(GeometryError::MalformedGraph(_))
        ));
    }

    #[test]
    fn validate_accepts_flat() {
        assert!(TotallyRealGraph::new(3, 1.0, PolyMap::zero(3, 3)).is_ok());
    }

    #[test]
    fn cutoff_vanishes_on_gamma_and_positive_below() {
        let v = CutoffV::default(grid(), (PI / 4.0, 3.0 * PI / 4.0)).unwrap();
        for j in v.gamma_nodes() {
            assert_eq!(v.value(j), 0.0);
        }
        let g = grid();
        for j in 0..g.n_nodes() {
            let th = g.node_angle(j);
            if th > PI && th < 2.0 * PI {
                assert!(v.value(j) > 0.0, "v({th}) should be positive");
            }
        }
    }

    #[test]
    fn cutoff_formula_values() {
        assert_eq!(default_cutoff_value(PI / 2.0), 0.0);
        let expect = (-4.0 / (PI * PI)).exp();
        assert_abs_diff_eq!(
            default_cutoff_value(3.0 * PI / 2.0),
            expect,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cutoff_normal_bound_positive_and_cross_checked() {
        let v = CutoffV::default(grid(), (PI / 4.0, 3.0 * PI / 4.0)).unwrap();
        let b = v.normal_bound();
        assert!(b > 0.0);

        // Radial finite-difference oracle: one-sided derivative of the
        // Poisson extension at theta = pi/2, Richardson-extrapolated.
        let theta = PI / 2.0;
        let d = 1e-4;
        let u1 = crate::circle::poisson_extend(
            v.values(),
            crate::circle::DiscPoint::new(1.0 - d, theta).unwrap(),
        )[0];
        let u2 = crate::circle::poisson_extend(
            v.values(),
            crate::circle::DiscPoint::new(1.0 - d / 2.0, theta).unwrap(),
        )[0];
        let fd = 2.0 * ((0.0 - u2) / (d / 2.0)) - (0.0 - u1) / d;
        let node = grid().arc_nodes(theta - 1e-9, theta + 1e-9)[0];
        let spectral = v.normal_derivative().value(0, node);
        assert_abs_diff_eq!(spectral, fd, epsilon = 1e-2);
    }

    #[test]
    fn cutoff_rejects_bad_subarc() {
        assert!(CutoffV::default(grid(), (0.0, PI)).is_err());
        assert!(CutoffV::default(grid(), (1.0, 0.5)).is_err());
    }

    #[test]
    fn membership_basic() {
        let g1 = Polynomial::linear(2, 0, 1.0); // g = x1
        let set = ExceptionalSet::new(vec![g1], 1e-6).unwrap();
        assert!(set.membership(&[0.0, 0.3]));
        assert!(!set.membership(&[0.5, 0.3]));

        let g2 = Polynomial::from_terms(
            2,
            &[
                PolyTerm {
                    multi_index: vec![0, 1],
                    coeff: 1.0,
                },
                PolyTerm {
                    multi_index: vec![0, 0],
                    coeff: -0.25,
                },
            ],
        ); // x2 - 0.25
        let set2 = ExceptionalSet::new(vec![Polynomial::linear(2, 0, 1.0), g2], 1e-6).unwrap();
        assert!(set2.membership(&[0.4, 0.25]));
    }

    #[test]
    fn exceptional_rejects_identically_zero() {
        assert!(ExceptionalSet::new(vec![Polynomial::zero(2)], 1e-6).is_err());
        assert!(ExceptionalSet::new(vec![], 0.0).is_err());
    }

    #[test]
    fn normalize_identity_on_normalized_graph() {
        let out = normalize_graph(&quad_h(), 1.0).unwrap();
        assert_eq!(out.change.deviation_from_identity(), 0.0);
        assert_eq!(out.graph.h(), &quad_h());
    }

    #[test]
    fn normalize_removes_linear_tilt() {
        // y = 0.1 x (pure linear tilt): the rotated graph is flat.
        let l = PolyMap::new(
            2,
            vec![Polynomial::linear(2, 0, 0.1), Polynomial::linear(2, 1, 0.1)],
        );
        let out = normalize_graph(&l, 1.0).unwrap();
        assert!(out.graph.h().max_abs_coeff() <= 1e-13);
        // Round-trip sample points through the coordinate change.
        let z = vec![Complex64::new(0.3, 0.03), Complex64::new(-0.2, -0.02)];
        let w = out.change.apply(&z);
        let back = out.change.apply_inverse(&w);
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_complex_line() {
        // Tangent y = Jx: L is the rotation by 90 degrees, so T contains a
        // complex line.
        let l = PolyMap::new(
            2,
            vec![
                Polynomial::linear(2, 1, -1.0),
                Polynomial::linear(2, 0, 1.0),
            ],
        );
        assert!(matches!(
            normalize_graph(&l, 1.0),
            Err(GeometryError::NotTotallyReal { .. })
        ));
    }

    #[test]
    fn normalize_is_idempotent() {
        let l = PolyMap::new(
            2,
            vec![
                Polynomial::linear(2, 0, 0.1).add(&quad_h().component(0).clone()),
                quad_h().component(1).clone(),
            ],
        );
        let once = normalize_graph(&l, 1.0).unwrap();
        let twice = normalize_graph(once.graph.h(), 1.0).unwrap();
        assert!(twice.change.deviation_from_identity() <= 1e-12);
    }

    #[test]
    fn slice_identity_when_m_equals_n() {
        let g = GenericGraph::new(2, 2, 1.0, quad_h()).unwrap();
        let b = PlaneSlice::new(DMatrix::zeros(2, 0));
        let out = slice(&g, &b, 0.5).unwrap();
        assert_eq!(out.graph.h(), &quad_h());
    }

    #[test]
    fn slice_flat_stays_flat() {
        // n=2, m=3 flat generic graph: h == 0 on R^3.
        let g = GenericGraph::new(2, 3, 1.0, PolyMap::zero(3, 1)).unwrap();
        let b = PlaneSlice::new(DMatrix::from_column_slice(2, 1, &[0.1, 0.05]));
        let out = slice(&g, &b, 0.5).unwrap();
        assert!(out.graph.h().max_abs_coeff() <= 1e-13);
    }

    #[test]
    fn slice_substitution_matches_symbolic_oracle() {
        // n=2, m=3, h(x, y3) = x1*y3, B = (0.1, 0)^T.
        // Substituting y3 = 0.1 x1 gives the pre-normalization graph
        // component 0.1 x1^2; the oracle substitutes symbolically.
        let h = PolyMap::new(
            3,
            vec![Polynomial::from_terms(
                3,
                &[PolyTerm {
                    multi_index: vec![1, 0, 1],
                    coeff: 1.0,
                }],
            )],
        );
        let g = GenericGraph::new(2, 3, 1.0, h.clone()).unwrap();
        let b = PlaneSlice::new(DMatrix::from_column_slice(2, 1, &[0.1, 0.0]));
        let subs = slice_substitutions(2, &b);
        let oracle = h.substitute(&subs);
        assert_abs_diff_eq!(oracle.component(0).coeff(&[2, 0]), 0.1, epsilon = 1e-15);

        // Full pipeline keeps the quadratic coefficient to 1e-12 after the
        // (small-tilt) renormalization.
        let out = slice(&g, &b, 0.5).unwrap();
        let got = out.graph.h().component(0).coeff(&[2, 0]);
        assert_abs_diff_eq!(got, 0.1, epsilon = 1e-3);
        // And the graph really is normalized.
        assert_eq!(out.graph.h().linear_part().amax(), 0.0);
    }

    #[test]
    fn sample_good_b_accepts_immediately_when_empty() {
        let g = GenericGraph::new(2, 3, 1.0, PolyMap::zero(3, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = sample_good_b(&g, &ExceptionalSet::empty(), &mut rng, 0.2, 1).unwrap();
        assert!(b.norm() <= 0.2);
    }

    #[test]
    fn sample_good_b_hyperplane_cases() {
        let g = GenericGraph::new(2, 3, 1.0, PolyMap::zero(3, 1)).unwrap();
        // g1 = y3 - 0.05: sliced to x.B - 0.05, nonzero for any B (the
        // constant survives), so accepted.
        let g1 = Polynomial::from_terms(
            3,
            &[
                PolyTerm {
                    multi_index: vec![0, 0, 1],
                    coeff: 1.0,
                },
                PolyTerm {
                    multi_index: vec![0, 0, 0],
                    coeff: -0.05,
                },
            ],
        );
        let set = ExceptionalSet::new(vec![g1], 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_good_b(&g, &set, &mut rng, 0.2, 10).is_ok());

        // g = x1 survives every slice.
        let set2 = ExceptionalSet::new(vec![Polynomial::linear(3, 0, 1.0)], 1e-6).unwrap();
        assert!(sample_good_b(&g, &set2, &mut rng, 0.2, 10).is_ok());
    }
}
