//! Versioned JSON experiment configuration and its conversion into domain
//! objects. Every run is fully described by one config document plus a
//! mandatory seed, so reports are reproducible and diffable.

use crate::bishop::ParamBox;
use crate::circle::{CircleGrid, DiscPoint};
use crate::geometry::{CutoffV, ExceptionalSet, GenericGraph, GeometryError, TotallyRealGraph};
use crate::poly::{PolyMap, PolyTerm, Polynomial};
use crate::potential::{PshKind, PshTestFn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn schema_err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Schema(msg.into()))
}

/// Polynomial map as a coefficient table, one term list per component.
pub type PolyTable = Vec<Vec<PolyTerm>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldConfig {
    TotallyReal {
        dim: usize,
        domain_radius: f64,
        h: PolyTable,
    },
    Generic {
        ambient: usize,
        manifold_dim: usize,
        delta: f64,
        h: PolyTable,
        #[serde(default = "default_slice_norm_bound")]
        slice_norm_bound: f64,
        #[serde(default = "default_slice_attempts")]
        slice_attempts: usize,
    },
}

fn default_slice_norm_bound() -> f64 {
    0.1
}

fn default_slice_attempts() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExceptionalConfig {
    #[serde(default)]
    pub surfaces: PolyTable,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl Default for ExceptionalConfig {
    fn default() -> Self {
        Self {
            surfaces: Vec::new(),
            eta: default_eta(),
        }
    }
}

fn default_eta() -> f64 {
    1e-6
}

/// One complex coefficient of a fixture polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexTerm {
    pub multi_index: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FixtureKind {
    Constant { value: f64 },
    LogPole { eps: f64, terms: Vec<ComplexTerm> },
    Max { parts: Vec<FixtureKind> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub name: String,
    pub validity_radius: f64,
    pub kind: FixtureKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tolerances {
    #[serde(default = "d_solve_tol")]
    pub solve_tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_omega_threshold")]
    pub omega_threshold: f64,
    #[serde(default = "d_bound_tol")]
    pub bound_tol: f64,
    #[serde(default = "d_consistency_tol")]
    pub consistency_tol: f64,
    #[serde(default = "d_coverage_floor")]
    pub coverage_floor: f64,
    #[serde(default = "d_fd_step")]
    pub fd_step: f64,
    #[serde(default = "d_hit_cap")]
    pub hit_cap: usize,
    #[serde(default = "d_max_halvings")]
    pub max_halvings: usize,
}

fn d_solve_tol() -> f64 {
    1e-12
}
fn d_max_iter() -> usize {
    500
}
fn d_omega_threshold() -> f64 {
    0.25
}
fn d_bound_tol() -> f64 {
    1e-8
}
fn d_consistency_tol() -> f64 {
    1e-6
}
fn d_coverage_floor() -> f64 {
    0.999
}
fn d_fd_step() -> f64 {
    1e-5
}
fn d_hit_cap() -> usize {
    32
}
fn d_max_halvings() -> usize {
    8
}

impl Default for Tolerances {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "d_n_discs")]
    pub n_discs: usize,
    #[serde(default = "d_density_discs")]
    pub density_discs: usize,
    #[serde(default = "d_n_targets")]
    pub n_targets: usize,
    #[serde(default = "d_lattice_radii")]
    pub lattice_radii: usize,
    #[serde(default = "d_scan_per_axis")]
    pub scan_per_axis: usize,
    #[serde(default = "d_probe_radius")]
    pub probe_radius: f64,
    #[serde(default = "d_ball_samples")]
    pub ball_samples: usize,
}

fn d_n_discs() -> usize {
    100
}
fn d_density_discs() -> usize {
    1000
}
fn d_n_targets() -> usize {
    10_000
}
fn d_lattice_radii() -> usize {
    256
}
fn d_scan_per_axis() -> usize {
    5
}
fn d_probe_radius() -> f64 {
    1e-3
}
fn d_ball_samples() -> usize {
    512
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are total")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Mandatory: every stochastic quantity derives from this seed.
    pub seed: u64,
    #[serde(default = "d_n_nodes")]
    pub n_nodes: usize,
    /// Compact subarc of gamma on which the normal-derivative bound b is
    /// taken, as (start, end) angles inside (0, pi).
    #[serde(default = "d_gamma0")]
    pub gamma0: (f64, f64),
    pub manifold: ManifoldConfig,
    #[serde(default = "d_param_box")]
    pub param_box: ParamBox,
    #[serde(default)]
    pub exceptional: ExceptionalConfig,
    #[serde(default)]
    pub fixtures: Vec<FixtureConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Interior evaluation point (r, theta) for the full-map Jacobian.
    #[serde(default = "d_zeta0")]
    pub zeta0: (f64, f64),
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn d_n_nodes() -> usize {
    1024
}
fn d_gamma0() -> (f64, f64) {
    (PI / 4.0, 3.0 * PI / 4.0)
}
fn d_param_box() -> ParamBox {
    ParamBox::cube(2, 0.02, 0.02)
}
fn d_zeta0() -> (f64, f64) {
    (0.9, 3.0 * PI / 2.0)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return schema_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n_nodes < 8 || !self.n_nodes.is_power_of_two() {
            return schema_err(format!("n_nodes = {} must be a power of two >= 8", self.n_nodes));
        }
        let (a, b) = self.gamma0;
        if !(0.0 < a && a < b && b < PI) {
            return schema_err(format!("gamma0 = ({a}, {b}) must lie strictly inside (0, pi)"));
        }
        if self.param_box.c_half_widths.len() != self.param_box.t_half_widths.len()
            || self
                .param_box
                .c_half_widths
                .iter()
                .chain(&self.param_box.t_half_widths)
                .any(|&w| w <= 0.0)
        {
            return schema_err("param_box half-widths must be positive and of equal length");
        }
        let dim = self.dim();
        if self.param_box.dim() != dim {
            return schema_err(format!(
                "param_box dimension {} does not match manifold dimension {dim}",
                self.param_box.dim()
            ));
        }
        match &self.manifold {
            ManifoldConfig::TotallyReal { dim, domain_radius, .. } => {
                if *dim == 0 || *domain_radius <= 0.0 {
                    return schema_err("totally real manifold needs dim >= 1 and a positive domain radius");
                }
            }
            ManifoldConfig::Generic {
                ambient,
                manifold_dim,
                delta,
                ..
            } => {
                if !(*ambient >= 1 && *manifold_dim >= *ambient && *manifold_dim <= 2 * ambient) {
                    return schema_err(format!(
                        "generic manifold needs n <= m <= 2n, got n = {ambient}, m = {manifold_dim}"
                    ));
                }
                if *delta <= 0.0 {
                    return schema_err("generic manifold needs a positive delta");
                }
            }
        }
        if self.exceptional.eta <= 0.0 {
            return schema_err("exceptional.eta must be positive");
        }
        for f in &self.fixtures {
            if f.validity_radius <= 0.0 {
                return schema_err(format!("fixture '{}' needs a positive validity radius", f.name));
            }
            validate_fixture_kind(&f.name, &f.kind)?;
        }
        let (r, _) = self.zeta0;
        if !(0.0..1.0).contains(&r) {
            return schema_err(format!("zeta0 radius {r} must lie in [0, 1)"));
        }
        if !(0.0 < self.tolerances.omega_threshold && self.tolerances.omega_threshold < 1.0) {
            return schema_err("omega_threshold must lie in (0, 1)");
        }
        Ok(())
    }

    /// Parameter-space dimension n (the ambient complex dimension).
    pub fn dim(&self) -> usize {
        match &self.manifold {
            ManifoldConfig::TotallyReal { dim, .. } => *dim,
            ManifoldConfig::Generic { ambient, .. } => *ambient,
        }
    }

    /// Dimension of the manifold parameter domain: n for a totally real
    /// graph, m for a generic one (parameters (x, y'')).
    pub fn param_dim(&self) -> usize {
        match &self.manifold {
            ManifoldConfig::TotallyReal { dim, .. } => *dim,
            ManifoldConfig::Generic { manifold_dim, .. } => *manifold_dim,
        }
    }

    pub fn grid(&self) -> CircleGrid {
        CircleGrid::new(self.n_nodes).expect("validated power of two")
    }

    pub fn cutoff(&self) -> Result<CutoffV, ConfigError> {
        Ok(CutoffV::default(self.grid(), self.gamma0)?)
    }

    pub fn zeta0_point(&self) -> DiscPoint {
        DiscPoint::new(self.zeta0.0, self.zeta0.1).expect("validated radius")
    }

    /// The totally real graph, when the config is in the m = n case.
    pub fn totally_real_graph(&self) -> Result<TotallyRealGraph, ConfigError> {
        match &self.manifold {
            ManifoldConfig::TotallyReal {
                dim,
                domain_radius,
                h,
            } => Ok(TotallyRealGraph::new(
                *dim,
                *domain_radius,
                table_to_map(*dim, h)?,
            )?),
            ManifoldConfig::Generic { .. } => schema_err(
                "config describes a generic manifold; use the slice pipeline",
            ),
        }
    }

    pub fn generic_graph(&self) -> Result<GenericGraph, ConfigError> {
        match &self.manifold {
            ManifoldConfig::Generic {
                ambient,
                manifold_dim,
                delta,
                h,
                ..
            } => Ok(GenericGraph::new(
                *ambient,
                *manifold_dim,
                *delta,
                // The graph map takes all m parameters (x, y'').
                table_to_map(*manifold_dim, h)?,
            )?),
            ManifoldConfig::TotallyReal { .. } => {
                schema_err("config describes a totally real manifold, not a generic one")
            }
        }
    }

    pub fn exceptional_set(&self) -> Result<ExceptionalSet, ConfigError> {
        if self.exceptional.surfaces.is_empty() {
            return Ok(ExceptionalSet::empty());
        }
        let dim = self.param_dim();
        let surfaces = self
            .exceptional
            .surfaces
            .iter()
            .map(|terms| Polynomial::from_terms(dim, terms))
            .collect();
        Ok(ExceptionalSet::new(surfaces, self.exceptional.eta)?)
    }

    pub fn psh_fixtures(&self) -> Result<Vec<PshTestFn>, ConfigError> {
        self.fixtures
            .iter()
            .map(|f| {
                Ok(PshTestFn::new(
                    f.name.clone(),
                    f.validity_radius,
                    kind_to_psh(self.dim(), &f.kind)?,
                ))
            })
            .collect()
    }
}

fn validate_fixture_kind(name: &str, kind: &FixtureKind) -> Result<(), ConfigError> {
    match kind {
        FixtureKind::Constant { value } => {
            if !(0.0..=1.0).contains(value) {
                return schema_err(format!("fixture '{name}': constant must lie in [0, 1]"));
            }
        }
        FixtureKind::LogPole { eps, terms } => {
            if *eps <= 0.0 {
                return schema_err(format!("fixture '{name}': eps must be positive"));
            }
            if terms.is_empty() {
                return schema_err(format!("fixture '{name}': log pole needs coefficients"));
            }
        }
        FixtureKind::Max { parts } => {
            if parts.is_empty() {
                return schema_err(format!("fixture '{name}': max of nothing"));
            }
            for p in parts {
                validate_fixture_kind(name, p)?;
            }
        }
    }
    Ok(())
}

fn kind_to_psh(dim: usize, kind: &FixtureKind) -> Result<PshKind, ConfigError> {
    Ok(match kind {
        FixtureKind::Constant { value } => PshKind::Constant(*value),
        FixtureKind::LogPole { eps, terms } => PshKind::LogPole {
            eps: *eps,
            poly: crate::poly::ComplexPoly::new(
                dim,
                terms
                    .iter()
                    .map(|t| (t.multi_index.clone(), Complex64::new(t.re, t.im)))
                    .collect(),
            ),
        },
        FixtureKind::Max { parts } => PshKind::Max(
            parts
                .iter()
                .map(|p| kind_to_psh(dim, p))
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn table_to_map(dim: usize, table: &PolyTable) -> Result<PolyMap, ConfigError> {
    let comps: Vec<Polynomial> = table
        .iter()
        .map(|terms| Polynomial::from_terms(dim, terms))
        .collect();
    Ok(PolyMap::new(dim, comps))
}
