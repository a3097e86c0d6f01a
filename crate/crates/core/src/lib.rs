//! Spectral construction of analytic discs attached to totally real
//! submanifolds of C^n, and a verification harness for the quantitative
//! estimates behind the construction: harmonic measure bounds, Jacobian
//! non-degeneracy, tangential derivative bounds and good-disc density.
//!
//! The crate is organized bottom-up:
//!
//! - [`circle`] — Fourier analysis on the unit circle: harmonic conjugation,
//!   Poisson/harmonic extension, spectral differentiation.
//! - [`poly`] — polynomial maps given by multi-index coefficient tables,
//!   with exact derivatives and substitution.
//! - [`geometry`] — manifold graphs, the boundary cutoff, exceptional sets
//!   and slicing of higher-dimensional generic graphs.
//! - [`bishop`] — the Picard fixed-point solver for the Bishop equation and
//!   assembly of the holomorphic disc family.
//! - [`potential`] — harmonic measure of boundary arcs, the two-constants
//!   estimate, PSH test fixtures and good-disc detection.
//! - [`jacobians`] — finite-difference verification of the non-degeneracy
//!   of the disc family in its parameters.
//! - [`config`] / [`harness`] — config-driven end-to-end experiments and
//!   reporting; the CLI binary `discs` dispatches into [`harness`].

pub mod bishop;
pub mod circle;
pub mod config;
pub mod geometry;
pub mod harness;
pub mod jacobians;
pub mod poly;
pub mod potential;
pub mod rng;
