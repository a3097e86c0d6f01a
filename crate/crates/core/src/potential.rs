//! Potential theory on the unit disc: harmonic measure of boundary arcs in
//! the negative convention (boundary data -chi_arc), the region Omega, the
//! two-constants estimate, PSH test fixtures with their compositions along
//! discs, and good-disc detection against an exceptional set.

use crate::bishop::AnalyticDisc;
use crate::circle::{CircleGrid, DiscPoint};
use crate::geometry::ExceptionalSet;
use crate::poly::ComplexPoly;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("no interior lattice point satisfies the region threshold; refine the lattice")]
    ResolutionTooCoarse,
    #[error("two-constants hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("disc image left the fixture validity region (|z| = {norm:.3e} > {radius:.3e})")]
    RangeEscape { norm: f64, radius: f64 },
    #[error("arc [{0}, {1}] is not a valid angle interval")]
    BadArc(f64, f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Closed boundary arc [start, end] in angle coordinates, 0 <= start < end
/// <= 2 pi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArcInterval {
    pub start: f64,
    pub end: f64,
}

impl ArcInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, PotentialError> {
        if !(0.0..2.0 * PI).contains(&start) || end <= start || end > 2.0 * PI + 1e-12 {
            return Err(PotentialError::BadArc(start, end));
        }
        Ok(Self { start, end })
    }

    /// The attachment arc gamma: the upper half-circle.
    pub fn gamma() -> Self {
        Self { start: 0.0, end: PI }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, theta: f64) -> bool {
        let t = theta.rem_euclid(2.0 * PI);
        (t >= self.start - 1e-12 && t <= self.end + 1e-12)
            || (t + 2.0 * PI) <= self.end + 1e-12
    }

    /// True iff self is contained in other.
    pub fn subset_of(&self, other: &ArcInterval) -> bool {
        self.start >= other.start - 1e-12 && self.end <= other.end + 1e-12
    }
}

/// Antiderivative of the Poisson kernel: G is continuous, increasing, with
/// G(phi + 2 pi) = G(phi) + 2 pi; lambda = (1+r)/(1-r).
fn poisson_antiderivative(phi: f64, lambda: f64) -> f64 {
    let wraps = (phi / (2.0 * PI)).floor();
    let base = phi - wraps * 2.0 * PI;
    2.0 * (lambda * (base / 2.0).sin()).atan2((base / 2.0).cos()) + 2.0 * PI * wraps
}

/// Harmonic measure of a boundary arc in the negative convention:
/// the harmonic function with boundary data -chi_arc, so -1 on the arc and
/// 0 on the complementary arc. Evaluated in closed form via the Poisson
/// kernel antiderivative; boundary points take the -chi values directly.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicMeasure {
    arc: ArcInterval,
}

impl HarmonicMeasure {
    pub fn new(arc: ArcInterval) -> Self {
        Self { arc }
    }

    pub fn arc(&self) -> ArcInterval {
        self.arc
    }

    pub fn eval(&self, zeta: DiscPoint) -> f64 {
        if zeta.r >= 1.0 {
            return if self.arc.contains(zeta.theta) { -1.0 } else { 0.0 };
        }
        let lambda = (1.0 + zeta.r) / (1.0 - zeta.r);
        let upper = poisson_antiderivative(zeta.theta - self.arc.start, lambda);
        let lower = poisson_antiderivative(zeta.theta - self.arc.end, lambda);
        -(upper - lower) / (2.0 * PI)
    }

    /// Estimate of the radial boundary limit at `theta`, Richardson
    /// extrapolated from evaluations at r = 1 - delta and r = 1 - delta/2.
    pub fn radial_limit(&self, theta: f64, delta: f64) -> f64 {
        let near = self.eval(DiscPoint {
            r: 1.0 - delta / 2.0,
            theta,
        });
        let far = self.eval(DiscPoint {
            r: 1.0 - delta,
            theta,
        });
        2.0 * near - far
    }
}

/// Convenience: omega(zeta, arc, U) in the negative convention.
pub fn harmonic_measure(arc: ArcInterval, zeta: DiscPoint) -> f64 {
    HarmonicMeasure::new(arc).eval(zeta)
}

/// Polar evaluation lattice over the closed disc: equispaced radii
/// (including 0 and 1) crossed with the circle grid's angles.
#[derive(Debug, Clone)]
pub struct PolarLattice {
    radii: Vec<f64>,
    grid: CircleGrid,
}

impl PolarLattice {
    pub fn new(n_radii: usize, grid: CircleGrid) -> Self {
        assert!(n_radii >= 2);
        let radii = (0..n_radii)
            .map(|i| i as f64 / (n_radii - 1) as f64)
            .collect();
        Self { radii, grid }
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    pub fn point(&self, i: usize, j: usize) -> DiscPoint {
        DiscPoint {
            r: self.radii[i],
            theta: self.grid.node_angle(j),
        }
    }
}

/// Real scalar field sampled on a polar lattice.
#[derive(Debug, Clone)]
pub struct LatticeField {
    lattice: PolarLattice,
    values: Vec<Vec<f64>>,
}

impl LatticeField {
    pub fn from_fn<F: Fn(DiscPoint) -> f64>(lattice: PolarLattice, f: F) -> Self {
        let values = (0..lattice.radii.len())
            .map(|i| {
                (0..lattice.grid.n_nodes())
                    .map(|j| f(lattice.point(i, j)))
                    .collect()
            })
            .collect();
        Self { lattice, values }
    }

    /// Adopt precomputed row-major values; shape must match the lattice.
    pub fn from_rows(lattice: PolarLattice, values: Vec<Vec<f64>>) -> Self {
        assert_eq!(values.len(), lattice.radii.len());
        assert!(values.iter().all(|row| row.len() == lattice.grid.n_nodes()));
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &PolarLattice {
        &self.lattice
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |a, &x| a.max(x))
    }

    /// Values on the boundary row r = 1.
    pub fn boundary_row(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), PotentialError> {
        writeln!(w, "r,theta,value")?;
        for i in 0..self.values.len() {
            for j in 0..self.lattice.grid.n_nodes() {
                let p = self.lattice.point(i, j);
                writeln!(w, "{:.17e},{:.17e},{:.17e}", p.r, p.theta, self.values[i][j])?;
            }
        }
        Ok(())
    }
}

/// Sublevel region Omega = { 1 + omega < threshold } over a polar lattice.
#[derive(Debug, Clone)]
pub struct OmegaRegion {
    pub threshold: f64,
    lattice: PolarLattice,
    mask: Vec<Vec<bool>>,
    pub inradius: f64,
}

impl OmegaRegion {
    pub fn lattice(&self) -> &PolarLattice {
        &self.lattice
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.mask[i][j]
    }

    /// Lattice points in the region, as (radius index, angle index).
    pub fn points(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.mask.iter().enumerate() {
            for (j, &m) in row.iter().enumerate() {
                if m {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Interior (r < 1) points of the region.
    pub fn interior_points(&self) -> Vec<(usize, usize)> {
        let last = self.mask.len() - 1;
        self.points().into_iter().filter(|&(i, _)| i < last).collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), PotentialError> {
        writeln!(w, "r,theta,in_region")?;
        for i in 0..self.mask.len() {
            for j in 0..self.lattice.grid.n_nodes() {
                let p = self.lattice.point(i, j);
                writeln!(
                    w,
                    "{:.17e},{:.17e},{}",
                    p.r,
                    p.theta,
                    u8::from(self.mask[i][j])
                )?;
            }
        }
        Ok(())
    }
}

/// Build the region Omega for an arc at a threshold; every node of the arc
/// is in the region by construction (1 + omega = 0 there).
pub fn omega_region(
    arc: ArcInterval,
    threshold: f64,
    lattice: PolarLattice,
) -> Result<OmegaRegion, PotentialError> {
    assert!(threshold > 0.0 && threshold < 1.0);
    let omega = HarmonicMeasure::new(arc);
    let n_r = lattice.radii.len();
    let n_t = lattice.grid.n_nodes();
    let mask: Vec<Vec<bool>> = (0..n_r)
        .map(|i| {
            (0..n_t)
                .map(|j| 1.0 + omega.eval(lattice.point(i, j)) < threshold)
                .collect()
        })
        .collect();
    if !mask[..n_r - 1].iter().any(|row| row.iter().any(|&m| m)) {
        return Err(PotentialError::ResolutionTooCoarse);
    }
    // Radial depth of the region below the arc: the deepest contiguous
    // radial run from the boundary over the arc angles. Near the arc
    // endpoints 1 + omega tends to 1/2, so the region necessarily pinches
    // off there and the depth is attained mid-arc.
    let mut inradius = 0.0f64;
    for j in 0..n_t {
        if !arc.contains(lattice.grid.node_angle(j)) {
            continue;
        }
        let mut i_min = n_r - 1;
        while i_min > 0 && mask[i_min - 1][j] {
            i_min -= 1;
        }
        inradius = inradius.max(1.0 - lattice.radii[i_min]);
    }
    Ok(OmegaRegion {
        threshold,
        lattice,
        mask,
        inradius,
    })
}

/// Outcome of the generalized two-constants check.
#[derive(Debug, Clone, Serialize)]
pub struct TwoConstantsReport {
    pub k_arc: f64,
    pub k_global: f64,
    pub worst_margin: f64,
    pub worst_point: (f64, f64),
    pub passed: bool,
}

/// Verify u(zeta) <= k + (K - k)(1 + omega(zeta)) + tol over the lattice,
/// for a subharmonic candidate bounded by K globally and by k on the arc.
/// The specialization k = 0, K = 1 is the textbook statement.
pub fn two_constants_check(
    u: &LatticeField,
    arc: ArcInterval,
    k: f64,
    big_k: f64,
    tol: f64,
) -> Result<TwoConstantsReport, PotentialError> {
    let global_max = u.max();
    if global_max > big_k + tol {
        return Err(PotentialError::HypothesisViolated(format!(
            "max u = {global_max:.6e} exceeds K = {big_k:.6e}"
        )));
    }
    let grid = u.lattice().grid();
    for (j, &val) in u.boundary_row().iter().enumerate() {
        if arc.contains(grid.node_angle(j)) && val > k + tol {
            return Err(PotentialError::HypothesisViolated(format!(
                "u = {val:.6e} on the arc exceeds k = {k:.6e}"
            )));
        }
    }
    let omega = HarmonicMeasure::new(arc);
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = (0.0, 0.0);
    for i in 0..u.lattice().radii().len() {
        for j in 0..grid.n_nodes() {
            let p = u.lattice().point(i, j);
            let bound = k + (big_k - k) * (1.0 + omega.eval(p));
            let margin = u.value(i, j) - bound;
            if margin > worst {
                worst = margin;
                worst_point = (p.r, p.theta);
            }
        }
    }
    Ok(TwoConstantsReport {
        k_arc: k,
        k_global: big_k,
        worst_margin: worst,
        worst_point,
        passed: worst <= tol,
    })
}

/// PSH test fixture: an evaluator V on C^n together with a declared ball
/// on which it is plurisubharmonic with 0 <= V <= 1.
#[derive(Debug, Clone)]
pub struct PshTestFn {
    pub name: String,
    pub validity_radius: f64,
    kind: PshKind,
}

#[derive(Debug, Clone)]
pub enum PshKind {
    Constant(f64),
    /// max(0, 1 + eps * log|p(z)|) for a complex polynomial p.
    LogPole { eps: f64, poly: ComplexPoly },
    Max(Vec<PshKind>),
}

fn eval_kind(kind: &PshKind, z: &[Complex64]) -> f64 {
    match kind {
        PshKind::Constant(v) => *v,
        PshKind::LogPole { eps, poly } => {
            let p = poly.eval(z).norm();
            if p == 0.0 {
                0.0
            } else {
                (1.0 + eps * p.ln()).max(0.0)
            }
        }
        PshKind::Max(kids) => kids
            .iter()
            .map(|k| eval_kind(k, z))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

impl PshTestFn {
    pub fn new(name: impl Into<String>, validity_radius: f64, kind: PshKind) -> Self {
        Self {
            name: name.into(),
            validity_radius,
            kind,
        }
    }

    pub fn zero(n: usize) -> Self {
        let _ = n;
        Self::new("zero", 1.0, PshKind::Constant(0.0))
    }

    pub fn eval(&self, z: &[Complex64]) -> f64 {
        eval_kind(&self.kind, z)
    }

    /// Spot-check of the sub-mean-value inequality on random complex lines
    /// inside the validity ball; returns the worst residual
    /// V(z0) - circle-average.
    pub fn sub_mean_residual<R: Rng>(&self, dim: usize, rng: &mut R, samples: usize) -> f64 {
        let quad = 128;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let z0: Vec<Complex64> = (0..dim)
                .map(|_| {
                    Complex64::new(
                        rng.gen_range(-0.3..0.3) * self.validity_radius,
                        rng.gen_range(-0.3..0.3) * self.validity_radius,
                    )
                })
                .collect();
            let mut dir: Vec<Complex64> = (0..dim)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let norm = dir.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            dir.iter_mut().for_each(|c| *c /= norm);
            let rho = rng.gen_range(0.01..0.3) * self.validity_radius;
            let mut avg = 0.0;
            for q in 0..quad {
                let phase = Complex64::from_polar(rho, 2.0 * PI * q as f64 / quad as f64);
                let z: Vec<Complex64> =
                    z0.iter().zip(&dir).map(|(a, d)| a + phase * d).collect();
                avg += self.eval(&z);
            }
            avg /= quad as f64;
            worst = worst.max(self.eval(&z0) - avg);
        }
        worst
    }
}

/// Composition u = V o Phi sampled on a polar lattice of the disc.
pub struct Composition {
    pub field: LatticeField,
    /// Largest |Phi| seen over the lattice.
    pub max_image_norm: f64,
}

pub fn compose(
    v: &PshTestFn,
    disc: &AnalyticDisc,
    lattice: PolarLattice,
) -> Result<Composition, PotentialError> {
    let mut max_norm = 0.0f64;
    let n_r = lattice.radii().len();
    let n_t = lattice.grid().n_nodes();
    let mut values = vec![vec![0.0; n_t]; n_r];
    for i in 0..n_r {
        for j in 0..n_t {
            let z = disc.eval(lattice.point(i, j));
            let norm = z.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            max_norm = max_norm.max(norm);
            if norm > v.validity_radius {
                return Err(PotentialError::RangeEscape {
                    norm,
                    radius: v.validity_radius,
                });
            }
            values[i][j] = v.eval(&z);
        }
    }
    Ok(Composition {
        field: LatticeField { lattice, values },
        max_image_norm: max_norm,
    })
}

/// Sub-mean-value residual of u = V o Phi at sampled interior points:
/// max of u(zeta0) - circle-average of u around zeta0.
pub fn composition_sub_mean_residual<R: Rng>(
    v: &PshTestFn,
    disc: &AnalyticDisc,
    rng: &mut R,
    samples: usize,
) -> f64 {
    let quad = 128;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let r0 = rng.gen_range(0.0..0.6);
        let th0 = rng.gen_range(0.0..2.0 * PI);
        let rho = rng.gen_range(0.01..0.3);
        let z0 = Complex64::from_polar(r0, th0);
        let u0 = v.eval(&disc.eval(DiscPoint { r: r0, theta: th0 }));
        let mut avg = 0.0;
        for q in 0..quad {
            let z = z0 + Complex64::from_polar(rho, 2.0 * PI * q as f64 / quad as f64);
            let p = DiscPoint {
                r: z.norm(),
                theta: z.im.atan2(z.re),
            };
            avg += v.eval(&disc.eval(p));
        }
        avg /= quad as f64;
        worst = worst.max(u0 - avg);
    }
    worst
}

/// Good-disc classification report.
#[derive(Debug, Clone, Serialize)]
pub struct GoodDiscReport {
    pub is_good: bool,
    /// Total count of near-zero gamma nodes across all surfaces.
    pub hits: usize,
    /// True iff every near-zero cluster is an isolated sign change.
    pub zero_isolation: bool,
}

/// Width (in nodes) up to which a near-zero cluster touching an endpoint of
/// gamma is still accepted as isolated.
const ENDPOINT_CLUSTER_WIDTH: usize = 3;

/// Classify a disc against the exceptional set: evaluate each surface along
/// the X trace on gamma and certify that its zeros are finitely many
/// isolated crossings (so the pull-back gamma_I has length zero).
pub fn good_disc(d: &AnalyticDisc, set: &ExceptionalSet, hit_cap: usize) -> GoodDiscReport {
    let grid = d.grid();
    let gamma: Vec<usize> = grid.arc_nodes(0.0, PI);
    let mut total_hits = 0usize;
    let mut isolation = true;
    for g in set.surfaces() {
        let vals: Vec<f64> = gamma
            .iter()
            .map(|&j| g.eval(&d.x_trace().node(j)))
            .collect();
        let near: Vec<bool> = vals.iter().map(|v| v.abs() <= set.eta()).collect();
        let hits = near.iter().filter(|&&b| b).count();
        total_hits += hits;
        if hits > hit_cap {
            isolation = false;
            continue;
        }
        // Scan near-zero clusters.
        let mut idx = 0;
        while idx < near.len() {
            if !near[idx] {
                idx += 1;
                continue;
            }
            let start = idx;
            while idx < near.len() && near[idx] {
                idx += 1;
            }
            let end = idx; // exclusive
            let at_edge = start == 0 || end == near.len();
            if at_edge {
                if end - start > ENDPOINT_CLUSTER_WIDTH {
                    isolation = false;
                }
            } else if vals[start - 1] * vals[end] >= 0.0 {
                // No sign change across the cluster: tangency or worse.
                isolation = false;
            }
        }
    }
    let is_good = isolation && total_hits <= hit_cap.saturating_mul(set.surfaces().len().max(1));
    GoodDiscReport {
        is_good,
        hits: total_hits,
        zero_isolation: isolation,
    }
}
