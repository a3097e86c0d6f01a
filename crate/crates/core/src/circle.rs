//! Spectral harmonic analysis on the unit circle and disc.
//!
//! Grid functions live on an equispaced power-of-two grid; all operators
//! (harmonic conjugation, Poisson extension, tangential differentiation)
//! act through the discrete Fourier transform, so they are exact on
//! trigonometric polynomials resolved by the grid.

use num_complex::Complex64;
use rustfft::{num_complex::Complex, FftPlanner};
use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

/// Relative energy allowed in the top quarter of the spectrum before an
/// operation warns about under-resolution.
pub const ALIASING_ENERGY_FRACTION: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CircleError {
    #[error("grid size {0} must be a power of two and at least 8")]
    BadGridSize(usize),
    #[error("grid function contains a non-finite value")]
    NonFinite,
    #[error("component count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("value count {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("disc point radius {0} is outside [0, 1]")]
    BadRadius(f64),
    #[error("Schwarz integral is only evaluated in the open disc (r = {0})")]
    BoundaryPoint(f64),
    #[error("csv write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Equispaced discretization of the unit circle with a power-of-two node
/// count, nodes at theta_j = 2*pi*j/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircleGrid {
    n_nodes: usize,
}

impl CircleGrid {
    pub fn new(n_nodes: usize) -> Result<Self, CircleError> {
        if n_nodes < 8 || !n_nodes.is_power_of_two() {
            return Err(CircleError::BadGridSize(n_nodes));
        }
        Ok(Self { n_nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn node_angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_nodes as f64
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(move |j| self.node_angle(j))
    }

    /// Indices of the nodes lying on the closed arc [start, end].
    pub fn arc_nodes(&self, start: f64, end: f64) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&j| {
                let th = self.node_angle(j);
                th >= start - 1e-14 && th <= end + 1e-14
            })
            .collect()
    }
}

/// A point of the closed unit disc in polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscPoint {
    pub r: f64,
    pub theta: f64,
}

impl DiscPoint {
    pub fn new(r: f64, theta: f64) -> Result<Self, CircleError> {
        if !(0.0..=1.0).contains(&r) {
            return Err(CircleError::BadRadius(r));
        }
        Ok(Self { r, theta })
    }

    pub fn origin() -> Self {
        Self { r: 0.0, theta: 0.0 }
    }

    pub fn from_cartesian(x: f64, y: f64) -> Result<Self, CircleError> {
        Self::new(x.hypot(y), y.atan2(x))
    }

    pub fn to_cartesian(self) -> (f64, f64) {
        (self.r * self.theta.cos(), self.r * self.theta.sin())
    }
}

/// R^d-valued function sampled at the grid nodes. Stored component-major:
/// `components[k][j]` is the k-th component at node j.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    grid: CircleGrid,
    components: Vec<Vec<f64>>,
}

impl GridFn {
    pub fn from_components(grid: CircleGrid, components: Vec<Vec<f64>>) -> Result<Self, CircleError> {
        for comp in &components {
            if comp.len() != grid.n_nodes() {
                return Err(CircleError::LengthMismatch {
                    expected: grid.n_nodes(),
                    got: comp.len(),
                });
            }
            if comp.iter().any(|x| !x.is_finite()) {
                return Err(CircleError::NonFinite);
            }
        }
        Ok(Self { grid, components })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: CircleGrid, f: F) -> Self {
        let values = grid.angles().map(f).collect();
        Self {
            grid,
            components: vec![values],
        }
    }

    pub fn from_vector_fn<F: Fn(f64) -> Vec<f64>>(grid: CircleGrid, dim: usize, f: F) -> Self {
        let mut components = vec![Vec::with_capacity(grid.n_nodes()); dim];
        for th in grid.angles() {
            let row = f(th);
            assert_eq!(row.len(), dim);
            for (k, x) in row.into_iter().enumerate() {
                components[k].push(x);
            }
        }
        Self { grid, components }
    }

    pub fn constant(grid: CircleGrid, values: &[f64]) -> Self {
        Self {
            grid,
            components: values.iter().map(|&v| vec![v; grid.n_nodes()]).collect(),
        }
    }

    pub fn zeros(grid: CircleGrid, dim: usize) -> Self {
        Self::constant(grid, &vec![0.0; dim])
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k]
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.components[k][j]
    }

    /// The value vector at node j.
    pub fn node(&self, j: usize) -> Vec<f64> {
        self.components.iter().map(|c| c[j]).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn sup_distance(&self, other: &GridFn) -> f64 {
        assert_eq!(self.dim(), other.dim());
        assert_eq!(self.grid, other.grid);
        let mut m = 0.0f64;
        for (a, b) in self.components.iter().zip(&other.components) {
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    /// Arithmetic node mean, componentwise.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.grid.n_nodes() as f64;
        self.components
            .iter()
            .map(|c| c.iter().sum::<f64>() / n)
            .collect()
    }

    pub fn map_nodes<F: Fn(&[f64]) -> Vec<f64>>(&self, out_dim: usize, f: F) -> GridFn {
        let n = self.grid.n_nodes();
        let mut components = vec![Vec::with_capacity(n); out_dim];
        let mut row = vec![0.0; self.dim()];
        for j in 0..n {
            for (k, c) in self.components.iter().enumerate() {
                row[k] = c[j];
            }
            let out = f(&row);
            assert_eq!(out.len(), out_dim);
            for (k, x) in out.into_iter().enumerate() {
                components[k].push(x);
            }
        }
        GridFn {
            grid: self.grid,
            components,
        }
    }

    /// Serialize as CSV with columns theta, value_1..value_d.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), CircleError> {
        write!(w, "theta")?;
        for k in 0..self.dim() {
            write!(w, ",value_{}", k + 1)?;
        }
        writeln!(w)?;
        for j in 0..self.grid.n_nodes() {
            write!(w, "{:.17e}", self.grid.node_angle(j))?;
            for c in &self.components {
                write!(w, ",{:.17e}", c[j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_forward(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

fn fft_inverse_real(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut buf = coeffs.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(&mut buf));
    buf.iter().map(|c| c.re).collect()
}

/// Wavenumber of FFT bin `i` for transform length `n`: 0..n/2 then negative.
fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Per-component Fourier coefficients of a grid function, in FFT bin order.
#[derive(Debug, Clone)]
pub struct FourierCoeffs {
    n_nodes: usize,
    coeffs: Vec<Vec<Complex64>>,
}

impl FourierCoeffs {
    pub fn of(f: &GridFn) -> Self {
        Self {
            n_nodes: f.grid().n_nodes(),
            coeffs: f.components.iter().map(|c| fft_forward(c)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn component(&self, k: usize) -> &[Complex64] {
        &self.coeffs[k]
    }

    pub fn to_grid_fn(&self, grid: CircleGrid) -> GridFn {
        assert_eq!(grid.n_nodes(), self.n_nodes);
        GridFn {
            grid,
            components: self.coeffs.iter().map(|c| fft_inverse_real(c)).collect(),
        }
    }

    /// Fraction of spectral energy carried by wavenumbers |k| >= n/4.
    pub fn tail_energy_fraction(&self) -> f64 {
        let n = self.n_nodes;
        let mut total = 0.0;
        let mut tail = 0.0;
        for comp in &self.coeffs {
            for (i, c) in comp.iter().enumerate() {
                let e = c.norm_sqr();
                total += e;
                if wavenumber(i, n).unsigned_abs() >= (n / 4) as u64 {
                    tail += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }

    /// Harmonic extension at a disc point: the r^|k|-damped Fourier sum,
    /// componentwise real part. At r = 1 this is the trigonometric
    /// interpolant of the boundary data.
    pub fn harmonic_eval(&self, zeta: DiscPoint) -> Vec<f64> {
        let n = self.n_nodes;
        self.coeffs
            .iter()
            .map(|comp| {
                let mut sum = Complex64::new(0.0, 0.0);
                for (i, &a) in comp.iter().enumerate() {
                    let k = wavenumber(i, n);
                    let damp = zeta.r.powi(k.unsigned_abs() as i32);
                    let phase = Complex64::from_polar(1.0, k as f64 * zeta.theta);
                    sum += a * damp * phase;
                }
                sum.re
            })
            .collect()
    }

    /// Value of the holomorphic function with real part extending this
    /// (real) boundary data and imaginary part vanishing at the origin:
    /// a_0 + 2 sum_{0<k<n/2} a_k zeta^k + a_{n/2} zeta^{n/2}.
    pub fn holomorphic_eval(&self, zeta: Complex64) -> Vec<Complex64> {
        let n = self.n_nodes;
        self.coeffs
            .iter()
            .map(|comp| {
                let mut sum = Complex64::new(comp[0].re, 0.0);
                let mut pw = Complex64::new(1.0, 0.0);
                for (i, &a) in comp.iter().enumerate().take(n / 2).skip(1) {
                    let _ = i;
                    pw *= zeta;
                    sum += 2.0 * a * pw;
                }
                pw *= zeta;
                sum += Complex64::new(comp[n / 2].re, 0.0) * pw;
                sum
            })
            .collect()
    }

    /// Complex derivative of [`Self::holomorphic_eval`] at `zeta`.
    pub fn holomorphic_derivative(&self, zeta: Complex64) -> Vec<Complex64> {
        let n = self.n_nodes;
        self.coeffs
            .iter()
            .map(|comp| {
                let mut sum = Complex64::new(0.0, 0.0);
                let mut pw = Complex64::new(1.0, 0.0);
                for (i, &a) in comp.iter().enumerate().take(n / 2).skip(1) {
                    sum += 2.0 * (i as f64) * a * pw;
                    pw *= zeta;
                }
                sum += (n / 2) as f64 * Complex64::new(comp[n / 2].re, 0.0) * pw;
                sum
            })
            .collect()
    }
}

fn warn_if_underresolved(coeffs: &FourierCoeffs, op: &str) {
    let frac = coeffs.tail_energy_fraction();
    if frac > ALIASING_ENERGY_FRACTION {
        log::warn!(
            "{op}: top-quarter spectral energy fraction {frac:.3e} exceeds {ALIASING_ENERGY_FRACTION:.0e}; \
             grid may be under-resolved"
        );
    }
}

/// Harmonic conjugation on the circle: the Fourier multiplier -i*sign(k),
/// with the mean (k = 0) of the output set to zero so that the conjugate
/// harmonic extension vanishes at the origin. The unpaired Nyquist bin is
/// zeroed to keep the output real.
pub fn conjugate(f: &GridFn) -> GridFn {
    let coeffs = FourierCoeffs::of(f);
    warn_if_underresolved(&coeffs, "conjugate");
    let n = f.grid().n_nodes();
    let out = coeffs
        .coeffs
        .iter()
        .map(|comp| {
            let mut c = comp.clone();
            for (i, a) in c.iter_mut().enumerate() {
                let k = wavenumber(i, n);
                *a = match k.cmp(&0) {
                    std::cmp::Ordering::Greater if i != n / 2 => {
                        Complex64::new(0.0, -1.0) * *a
                    }
                    std::cmp::Ordering::Less if i != n / 2 => Complex64::new(0.0, 1.0) * *a,
                    _ => Complex64::new(0.0, 0.0),
                };
            }
            fft_inverse_real(&c)
        })
        .collect();
    GridFn {
        grid: f.grid,
        components: out,
    }
}

/// Spectral tangential derivative: the multiplier i*k (Nyquist bin zeroed).
pub fn d_tau(f: &GridFn) -> GridFn {
    let coeffs = FourierCoeffs::of(f);
    warn_if_underresolved(&coeffs, "d_tau");
    let n = f.grid().n_nodes();
    let out = coeffs
        .coeffs
        .iter()
        .map(|comp| {
            let mut c = comp.clone();
            for (i, a) in c.iter_mut().enumerate() {
                if i == n / 2 {
                    *a = Complex64::new(0.0, 0.0);
                } else {
                    *a *= Complex64::new(0.0, wavenumber(i, n) as f64);
                }
            }
            fft_inverse_real(&c)
        })
        .collect();
    GridFn {
        grid: f.grid,
        components: out,
    }
}

/// Harmonic (Poisson) extension of the boundary data at a point of the
/// closed disc.
pub fn poisson_extend(f: &GridFn, zeta: DiscPoint) -> Vec<f64> {
    let coeffs = FourierCoeffs::of(f);
    warn_if_underresolved(&coeffs, "poisson_extend");
    coeffs.harmonic_eval(zeta)
}

/// Schwarz integral: the holomorphic function F with Re F|_T = f and
/// Im F(0) = 0, evaluated in the open disc.
pub fn schwarz(f: &GridFn, zeta: DiscPoint) -> Result<Vec<Complex64>, CircleError> {
    if zeta.r >= 1.0 {
        return Err(CircleError::BoundaryPoint(zeta.r));
    }
    let coeffs = FourierCoeffs::of(f);
    warn_if_underresolved(&coeffs, "schwarz");
    let z = Complex64::from_polar(zeta.r, zeta.theta);
    Ok(coeffs.holomorphic_eval(z))
}
